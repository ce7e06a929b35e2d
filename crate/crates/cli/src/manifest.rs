use std::path::{Path, PathBuf};

use serde::Serialize;

/// Record of one invocation, written next to its artifacts.
#[derive(Debug, Serialize)]
pub struct RunManifest<A: Serialize, C: Serialize> {
    pub subcommand: &'static str,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub args: A,
    /// Configuration with every default materialized.
    pub resolved: C,
}

impl<A: Serialize, C: Serialize> RunManifest<A, C> {
    pub fn new(subcommand: &'static str, args: A, resolved: C) -> Self {
        RunManifest {
            subcommand,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            args,
            resolved,
        }
    }
}

/// `dir/name.json` → `dir/name.manifest.json`.
pub fn manifest_path_for(artifact: &Path) -> PathBuf {
    let stem = artifact
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    artifact.with_file_name(format!("{stem}.manifest.json"))
}
