//! Manifest-driven batch commands over `vse-core`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vse_core::backbone::BackboneParams;
use vse_core::codec::CodecParams;
use vse_core::edit::EditConfig;
use vse_core::eval::DEFAULT_EPS;
use vse_core::geometry::ViewSpec;
use vse_core::select::SelectParams;
use vse_core::texture::TextureParams;

pub mod commands;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Scene,
    Encode,
    Decode,
    Edit,
    Verify,
    Eval,
    Bake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// `random`, `two_spheres` or `benchmark`; ignored when a scene file is given.
    pub preset: String,
    pub resolution: usize,
    pub view_size: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            preset: "random".into(),
            resolution: 96,
            view_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n_scenes: usize,
    pub boxes_per_scene: usize,
    pub eps: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_scenes: 20,
            boxes_per_scene: 5,
            eps: DEFAULT_EPS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub codec: CodecParams,
    pub backbone: BackboneParams,
    pub select: SelectParams,
    pub edit: EditConfig,
    pub texture: TextureParams,
    pub view: ViewSpec,
    pub scene: SceneConfig,
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub command: Option<Command>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Named input files, relative to the manifest's directory.
    pub inputs: BTreeMap<String, PathBuf>,
    pub config: RunConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vse_core::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("missing input '{0}'")]
    MissingInput(String),
    #[error("input file not found: {0}")]
    InputNotFound(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Manifest(_) => "manifest",
            CliError::MissingInput(_) => "missing_input",
            CliError::InputNotFound(_) => "input_not_found",
            CliError::Io(_) => "io",
        }
    }

    /// 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) | CliError::Io(_) => 1,
            _ => 2,
        }
    }

    pub fn report(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Command-line settings layered over the manifest file.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub command: Option<Command>,
    pub manifest: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub overrides: Vec<String>,
}

/// A manifest with flags applied and input paths resolved.
#[derive(Debug, Clone)]
pub struct Run {
    pub command: Command,
    pub manifest: RunManifest,
    pub out: PathBuf,
    base: PathBuf,
}

impl Run {
    pub fn input(&self, key: &str) -> CliResult<PathBuf> {
        self.optional_input(key)?.ok_or_else(|| CliError::MissingInput(key.into()))
    }

    pub fn optional_input(&self, key: &str) -> CliResult<Option<PathBuf>> {
        let Some(p) = self.manifest.inputs.get(key) else {
            return Ok(None);
        };
        let p = if p.is_absolute() { p.clone() } else { self.base.join(p) };
        if !p.exists() {
            return Err(CliError::InputNotFound(p));
        }
        Ok(Some(p))
    }

    pub fn seed(&self) -> u64 {
        self.manifest.seed
    }

    pub fn config(&self) -> &RunConfig {
        &self.manifest.config
    }
}

/// Sets `a.b.c` in a JSON tree; the value is read as JSON when it parses,
/// otherwise as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Manifest(format!("override '{assignment}' is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Manifest(format!("bad override key '{key}'")));
        }
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

pub fn resolve(inv: &Invocation) -> CliResult<Run> {
    let (mut tree, base) = match &inv.manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|_| CliError::InputNotFound(path.clone()))?;
            let tree: Value = serde_json::from_str(&text).map_err(|e| CliError::Manifest(e.to_string()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (tree, base)
        }
        None => (Value::Object(Default::default()), PathBuf::new()),
    };
    for o in &inv.overrides {
        apply_override(&mut tree, o)?;
    }
    let mut manifest: RunManifest = serde_json::from_value(tree).map_err(|e| CliError::Manifest(e.to_string()))?;
    if let Some(seed) = inv.seed {
        manifest.seed = seed;
    }
    let command = match (inv.command, manifest.command) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Manifest(format!("manifest is for {b:?}, not {a:?}")));
        }
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => return Err(CliError::Manifest("no command given".into())),
    };
    manifest.command = Some(command);
    let out = match (&inv.out, &manifest.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_absolute() => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(CliError::Manifest("no output directory".into())),
    };
    Ok(Run {
        command,
        manifest,
        out,
        base,
    })
}

/// Resolves and executes one command, returning the files written.
pub fn execute(inv: &Invocation) -> CliResult<Vec<PathBuf>> {
    let run = resolve(inv)?;
    std::fs::create_dir_all(&run.out)?;
    commands::dispatch(&run)
}
