//! Per-run record of what was asked for, what was read and what was written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use wassreg::sinkhorn::violation_audit;

pub const MANIFEST_NAME: &str = "run_manifest.txt";

#[derive(Debug)]
pub struct RunManifest {
    command: String,
    seed: Option<u64>,
    config: BTreeMap<String, String>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            seed: None,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config(&mut self, resolved: &BTreeMap<String, String>) {
        self.config = resolved.clone();
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), hash));
        Ok(())
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "input.sha256 = {h} {}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output = {}", p.display());
        }
        let (plans, worst) = violation_audit();
        if plans > 0 {
            let _ = writeln!(s, "sinkhorn.converged_plans = {plans}");
            let _ = writeln!(s, "sinkhorn.max_marginal_violation = {worst:e}");
        }
        s
    }

    /// Writes the manifest into `dir`.
    pub fn write(self, dir: &Path) -> Result<PathBuf> {
        self.write_to(dir.join(MANIFEST_NAME))
    }

    pub fn write_to(mut self, path: PathBuf) -> Result<PathBuf> {
        self.outputs.sort();
        std::fs::write(&path, self.render())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
