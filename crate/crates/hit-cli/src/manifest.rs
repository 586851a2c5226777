//! Run manifests: a plain-text record written into the output directory
//! before any work starts, carrying everything needed to replay the run
//! byte-for-byte (command, seed, dataset hash, full configuration).

use crate::config::AppConfig;
use crate::CliError;
use std::path::Path;

pub const MANIFEST_NAME: &str = "run.txt";

pub struct RunManifest {
    pub command: String,
    /// A shell line that reproduces the run.
    pub replay: String,
    pub seed: u64,
    /// Content hash of the dataset the run consumed (0 when none).
    pub dataset_hash: u64,
    pub config: AppConfig,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("command = {}\n", self.command));
        out.push_str(&format!("replay = {}\n", self.replay));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("dataset_hash = {:016x}\n", self.dataset_hash));
        out.push_str("\n# configuration\n");
        out.push_str(&self.config.serialize());
        out
    }

    /// Writes the manifest into `dir`, creating the directory first.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, self.render())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Reconstructs the replay line from the arguments the process received.
pub fn replay_line(argv: &[String]) -> String {
    argv.iter()
        .map(|a| {
            if a.chars().all(|c| c.is_ascii_alphanumeric() || "-_=./,".contains(c)) && !a.is_empty()
            {
                a.clone()
            } else {
                format!("'{}'", a.replace('\'', "'\\''"))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
