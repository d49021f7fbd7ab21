use std::path::{Path, PathBuf};

use serde::Serialize;
use vse_core::backbone::{Condition, SyntheticBackbone};
use vse_core::codec::{archive_bytes, decode_mesh, encode, read_archive, TokenSet};
use vse_core::edit::{diagnostics_csv, render_scatter, vecset_edit, EditRequest};
use vse_core::eval::{geometry_property_sweep, preservation_metrics};
use vse_core::geometry::io::{encode_pnm, obj_string, parse_samples_csv, read_obj, read_pnm};
use vse_core::geometry::{render_view, sample_surface, BoundingBox, Channel, ImageGrid, PrimitiveScene, TriangleMesh, ViewSpec};
use vse_core::scenes::{suite_scenes, two_spheres, EditBenchmark};
use vse_core::texture::{bake_texture, recolor, MultiViewSet};

use crate::{CliError, CliResult, Command, Run, RunManifest};

pub fn dispatch(run: &Run) -> CliResult<Vec<PathBuf>> {
    let mut out = Output::new(&run.out);
    match run.command {
        Command::Scene => scene(run, &mut out)?,
        Command::Encode => encode_cmd(run, &mut out)?,
        Command::Decode => decode_cmd(run, &mut out)?,
        Command::Edit => edit(run, &mut out)?,
        Command::Verify => verify(run, &mut out)?,
        Command::Eval => eval(run, &mut out)?,
        Command::Bake => bake(run, &mut out)?,
    }
    Ok(out.written)
}

/// Writes files under the output directory and remembers what it wrote.
struct Output {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn bytes(&mut self, rel: &str, data: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, data)?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn text(&mut self, rel: &str, s: &str) -> CliResult<PathBuf> {
        self.bytes(rel, s.as_bytes())
    }

    fn json<T: Serialize>(&mut self, rel: &str, v: &T) -> CliResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(v).map_err(vse_core::Error::from)?;
        s.push('\n');
        self.text(rel, &s)
    }

    fn obj(&mut self, rel: &str, mesh: &TriangleMesh) -> CliResult<PathBuf> {
        self.text(rel, &obj_string(mesh))
    }

    fn image(&mut self, rel: &str, img: &ImageGrid) -> CliResult<PathBuf> {
        self.bytes(rel, &encode_pnm(img)?)
    }

    fn archive(&mut self, stem: &str, tokens: &TokenSet) -> CliResult<PathBuf> {
        let (header, bin) = archive_bytes(tokens)?;
        self.bytes(&format!("{stem}.bin"), &bin)?;
        self.text(&format!("{stem}.json"), &header)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text).map_err(vse_core::Error::from)?)
}

/// Position-derived vertex colors so scene meshes have something to bake.
fn colorize(mut mesh: TriangleMesh) -> TriangleMesh {
    mesh.vertex_colors = Some(
        mesh.vertices
            .iter()
            .map(|v| [0, 1, 2].map(|k| (0.5 + 0.5 * v[k]).clamp(0.0, 1.0)))
            .collect(),
    );
    mesh
}

fn scene(run: &Run, out: &mut Output) -> CliResult<()> {
    let cfg = &run.config().scene;
    let from_file = run.optional_input("scene")?;
    let scene = match &from_file {
        Some(p) => read_json::<PrimitiveScene>(p)?,
        None => match cfg.preset.as_str() {
            "random" => PrimitiveScene::random(run.seed()),
            "two_spheres" | "benchmark" => two_spheres(),
            other => return Err(CliError::Manifest(format!("unknown scene preset '{other}'"))),
        },
    };
    scene.validate()?;
    let mesh = colorize(scene.mesh(cfg.resolution)?);
    out.json("scene.json", &scene)?;
    out.obj("scene.obj", &mesh)?;
    for v in ViewSpec::canonical_six(cfg.view_size, 1.0) {
        out.image(&format!("views/{}_normal.ppm", v.tag()), &render_view(&mesh, &v, Channel::Normal))?;
    }
    if from_file.is_none() && cfg.preset == "benchmark" {
        benchmark_kit(run, out)?;
    }
    Ok(())
}

/// Every input an edit run on the two-sphere benchmark needs, plus the
/// manifest that runs it.
fn benchmark_kit(run: &Run, out: &mut Output) -> CliResult<()> {
    let config = run.config();
    let bench = EditBenchmark::two_spheres(config.view.image_size);
    let req = bench.request(&config.codec, run.seed())?;
    let (_, target_mesh) = bench.meshes(config.codec.grid_resolution)?;
    out.obj("benchmark/source.obj", &req.source_mesh)?;
    out.obj("benchmark/target.obj", &target_mesh)?;
    out.archive("benchmark/source_tokens", &req.source_tokens)?;
    out.archive(
        "benchmark/target_tokens",
        req.target_view.target_tokens.as_ref().expect("benchmark target"),
    )?;
    out.image("benchmark/source_view.ppm", &req.source_view.image)?;
    out.image("benchmark/target_view.ppm", &req.target_view.image)?;
    out.image("benchmark/mask.pgm", &req.mask)?;
    out.json("benchmark/edit_box.json", &bench.edit_box)?;
    let mut config = config.clone();
    config.view = bench.view;
    let manifest = RunManifest {
        command: Some(Command::Edit),
        seed: run.seed(),
        out: Some("edit_out".into()),
        inputs: [
            ("source_mesh", "source.obj"),
            ("source_tokens", "source_tokens.json"),
            ("target_tokens", "target_tokens.json"),
            ("source_image", "source_view.ppm"),
            ("target_image", "target_view.ppm"),
            ("mask", "mask.pgm"),
            ("edit_box", "edit_box.json"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), PathBuf::from(v)))
        .collect(),
        config,
    };
    out.json("benchmark/edit.json", &manifest)?;
    Ok(())
}

fn load_samples(run: &Run) -> CliResult<Vec<vse_core::geometry::SurfaceSample>> {
    let n = run.config().codec.n_surf;
    if let Some(p) = run.optional_input("samples")? {
        return Ok(parse_samples_csv(&std::fs::read_to_string(p)?)?);
    }
    if let Some(p) = run.optional_input("scene")? {
        let scene: PrimitiveScene = read_json(&p)?;
        scene.validate()?;
        return Ok(scene.sample_surface(n, run.seed())?);
    }
    let mesh = read_obj(&run.input("mesh")?)?;
    Ok(sample_surface(&mesh, n, run.seed())?)
}

fn encode_cmd(run: &Run, out: &mut Output) -> CliResult<()> {
    let tokens = encode(&load_samples(run)?, &run.config().codec, run.seed())?;
    out.archive("tokens", &tokens)?;
    Ok(())
}

fn decode_cmd(run: &Run, out: &mut Output) -> CliResult<()> {
    let tokens = read_archive(&run.input("tokens")?)?;
    out.obj("decoded.obj", &decode_mesh(&tokens, run.config().codec.grid_resolution)?)?;
    Ok(())
}

#[derive(Serialize)]
struct EditSummary {
    k_start: usize,
    k_prune: usize,
    n_tokens: usize,
    edit_ids_initial: Vec<u32>,
    edit_ids_final: Vec<u32>,
    pruned_ids: Vec<u32>,
    cond_ids: Vec<u32>,
    conflict_ids: Vec<u32>,
}

fn edit(run: &Run, out: &mut Output) -> CliResult<()> {
    let config = run.config();
    let view = config.view;
    view.validate()?;
    let source_mesh = read_obj(&run.input("source_mesh")?)?;
    let source_tokens = match run.optional_input("source_tokens")? {
        Some(p) => read_archive(&p)?,
        None => encode(
            &sample_surface(&source_mesh, config.codec.n_surf, run.seed())?,
            &config.codec,
            run.seed(),
        )?,
    };
    let target_tokens = read_archive(&run.input("target_tokens")?)?;
    let target_image = read_pnm(&run.input("target_image")?)?;
    let source_image = match run.optional_input("source_image")? {
        Some(p) => read_pnm(&p)?,
        None => render_view(&source_mesh, &view, Channel::Normal),
    };
    let mask = read_pnm(&run.input("mask")?)?;
    let request = EditRequest {
        source_view: Condition::new(source_image, view, None)?,
        target_view: Condition::new(target_image, view, Some(target_tokens))?,
        source_mesh,
        source_tokens,
        mask,
    };
    request.validate()?;
    let mut bb_params = config.backbone.clone();
    bb_params.fixed_matching |= config.edit.fixed_matching;
    let backbone = SyntheticBackbone::new(bb_params)?;
    let mut edit_cfg = config.edit.clone();
    edit_cfg.seed = run.seed();
    edit_cfg.select = config.select;
    edit_cfg.keep_snapshots = true;
    let outcome = vecset_edit(&request, &edit_cfg, &backbone)?;

    let mesh = decode_mesh(&outcome.tokens, config.codec.grid_resolution)?;
    out.archive("tokens", &outcome.tokens)?;
    out.obj("edited.obj", &mesh)?;
    out.text("diagnostics.csv", &diagnostics_csv(&outcome.diagnostics))?;
    let (k_start, k_prune) = edit_cfg.schedule();
    let prune = outcome.prune.clone().unwrap_or_default();
    let initial: Vec<u32> = request.source_tokens.ids().difference(&outcome.preserved_ids).copied().collect();
    out.json(
        "selection.json",
        &EditSummary {
            k_start,
            k_prune,
            n_tokens: outcome.tokens.len(),
            edit_ids_initial: initial,
            edit_ids_final: outcome.edit_ids.iter().copied().collect(),
            pruned_ids: prune.removed_ids.into_iter().collect(),
            cond_ids: prune.cond_ids.into_iter().collect(),
            conflict_ids: prune.conflict_ids.into_iter().collect(),
        },
    )?;
    let preserved: Vec<_> = request.source_tokens.subset(&outcome.preserved_ids).positions();
    for (t, edit_pos) in &outcome.snapshots {
        let k = (t * edit_cfg.n_steps as f64).round() as usize;
        out.image(&format!("scatter/step_{k:03}.ppm"), &render_scatter(edit_pos, &preserved, &view))?;
    }
    if let Some(p) = run.optional_input("edit_box")? {
        let bx: BoundingBox = read_json(&p)?;
        let report = preservation_metrics(&request.source_mesh, &mesh, &bx, &config.texture.views())?;
        eprintln!("preservation metrics took {:.2}s", report.runtime_s);
        out.json("preservation.json", &report)?;
        out.text("preservation.txt", &report.table())?;
    }
    Ok(())
}

fn verify(run: &Run, out: &mut Output) -> CliResult<()> {
    let config = run.config();
    let scenes = match run.optional_input("scenes")? {
        Some(p) => read_json::<Vec<PrimitiveScene>>(&p)?,
        None => suite_scenes(config.verify.n_scenes, run.seed()),
    };
    for s in &scenes {
        s.validate()?;
    }
    let report = geometry_property_sweep(
        &scenes,
        config.verify.boxes_per_scene,
        &config.verify.eps,
        &config.codec,
        run.seed(),
    )?;
    out.json("property_report.json", &report)?;
    out.text("property_table.txt", &report.table())?;
    Ok(())
}

fn eval(run: &Run, out: &mut Output) -> CliResult<()> {
    let src = read_obj(&run.input("source_mesh")?)?;
    let edited = read_obj(&run.input("edited_mesh")?)?;
    let bx: BoundingBox = read_json(&run.input("edit_box")?)?;
    let report = preservation_metrics(&src, &edited, &bx, &run.config().texture.views())?;
    eprintln!("preservation metrics took {:.2}s", report.runtime_s);
    out.json("preservation.json", &report)?;
    out.text("preservation.txt", &report.table())?;
    Ok(())
}

fn read_views(dir: &Path, views: &[ViewSpec]) -> CliResult<Vec<ImageGrid>> {
    views
        .iter()
        .map(|v| {
            let p = dir.join(format!("{}.ppm", v.tag()));
            if !p.exists() {
                return Err(CliError::InputNotFound(p));
            }
            Ok(read_pnm(&p)?)
        })
        .collect()
}

fn bake(run: &Run, out: &mut Output) -> CliResult<()> {
    let params = run.config().texture;
    params.validate()?;
    let views = params.views();
    let src = read_obj(&run.input("source_mesh")?)?;
    let edited = read_obj(&run.input("edited_mesh")?)?;
    let mut src_views = MultiViewSet::render(&src, &views)?;
    if let Some(dir) = run.optional_input("source_views")? {
        src_views.images = read_views(&dir, &views)?;
    }
    let generated = match run.optional_input("generated_views")? {
        Some(dir) => read_views(&dir, &views)?,
        None => src_views.images.iter().map(recolor).collect(),
    };
    let baked = bake_texture(&src, &edited, &src_views, &generated, &params)?;
    out.obj("baked.obj", &baked.mesh)?;
    for ((v, m), c) in views.iter().zip(&baked.masks).zip(&baked.composited) {
        out.image(&format!("masks/{}.pgm", v.tag()), m)?;
        out.image(&format!("composited/{}.ppm", v.tag()), c)?;
    }
    Ok(())
}
