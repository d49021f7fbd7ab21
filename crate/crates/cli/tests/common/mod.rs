//! Helpers for driving the `vse` binary from tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn vse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vse"))
        .args(args)
        .output()
        .expect("spawn vse")
}

pub fn vse_ok(args: &[&str]) -> Output {
    let out = vse(args);
    assert!(
        out.status.success(),
        "vse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit code and error kind of a failed run.
pub fn vse_err(args: &[&str]) -> (i32, String) {
    let out = vse(args);
    assert!(!out.status.success(), "vse {args:?} unexpectedly succeeded");
    let report: serde_json::Value =
        serde_json::from_slice(out.stderr.trim_ascii()).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)));
    (
        out.status.code().unwrap(),
        report["error"]["kind"].as_str().unwrap().to_string(),
    )
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the two-sphere benchmark kit under `dir` and returns the path of the
/// edit manifest inside it.
pub fn benchmark_kit(dir: &Path, seed: u64) -> PathBuf {
    let seed = seed.to_string();
    vse_ok(&[
        "scene",
        "--out",
        s(dir),
        "--seed",
        &seed,
        "--override",
        "config.scene.preset=benchmark",
        "--override",
        "config.scene.resolution=48",
        "--override",
        "config.scene.view_size=32",
    ]);
    dir.join("benchmark/edit.json")
}

/// Relative path → contents for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn write_json(path: &Path, v: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// One manifest per command, all inside `dir`, built on a benchmark kit.
/// Returns `(command, manifest path)` pairs; outputs land in `<dir>/<command>_out`
/// unless the caller passes `--out`.
pub fn manifests_for_every_command(dir: &Path) -> Vec<(&'static str, PathBuf)> {
    let edit = benchmark_kit(dir, 3);
    let kit = dir.join("benchmark");
    let small_codec = serde_json::json!({ "n_tok": 128, "n_surf": 2000, "grid_resolution": 48 });
    let mut list = Vec::new();
    let mut add = |name: &'static str, v: serde_json::Value| {
        let p = kit.join(format!("run_{name}.json"));
        write_json(&p, &v);
        list.push((name, p));
    };
    add(
        "scene",
        serde_json::json!({ "command": "scene", "seed": 5, "out": "scene_out",
            "config": { "scene": { "preset": "random", "resolution": 48, "view_size": 32 } } }),
    );
    add(
        "encode",
        serde_json::json!({ "command": "encode", "seed": 5, "out": "encode_out",
            "inputs": { "mesh": "source.obj" }, "config": { "codec": small_codec } }),
    );
    add(
        "decode",
        serde_json::json!({ "command": "decode", "seed": 5, "out": "decode_out",
            "inputs": { "tokens": "source_tokens.json" }, "config": { "codec": { "grid_resolution": 48 } } }),
    );
    add(
        "verify",
        serde_json::json!({ "command": "verify", "seed": 5, "out": "verify_out",
            "config": { "codec": small_codec, "verify": { "n_scenes": 2, "boxes_per_scene": 2 } } }),
    );
    add(
        "eval",
        serde_json::json!({ "command": "eval", "seed": 5, "out": "eval_out",
            "inputs": { "source_mesh": "source.obj", "edited_mesh": "target.obj", "edit_box": "edit_box.json" },
            "config": { "texture": { "image_size": 32 } } }),
    );
    add(
        "bake",
        serde_json::json!({ "command": "bake", "seed": 5, "out": "bake_out",
            "inputs": { "source_mesh": "source.obj", "edited_mesh": "target.obj" },
            "config": { "texture": { "image_size": 32 } } }),
    );
    list.push(("edit", edit));
    list
}
