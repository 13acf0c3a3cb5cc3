use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};
use toml::value::{Table, Value};

use crate::io::io_err;
use rgcca::Result;

/// Every run writes exactly one `manifest.toml` into its output directory:
/// the command that ran, the fully resolved settings, the seeds, a SHA-256
/// of every input file, the tool version and the wall time.
pub struct Manifest {
    command: String,
    seed: Option<u64>,
    jobs: usize,
    inputs: Vec<(String, String)>,
    config: Table,
    started: Instant,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, jobs: usize) -> Self {
        Manifest {
            command: command.to_string(),
            seed,
            jobs,
            inputs: Vec::new(),
            config: Table::new(),
            started: Instant::now(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let digest = Sha256::digest(&bytes);
        self.inputs
            .push((path.display().to_string(), hex::encode(digest)));
        Ok(())
    }

    pub fn set_config(&mut self, config: Table) {
        self.config = config;
    }

    pub fn write(self, out_dir: &Path) -> Result<()> {
        let mut root = Table::new();
        root.insert("command".into(), Value::String(self.command));
        root.insert(
            "version".into(),
            Value::String(env!("CARGO_PKG_VERSION").to_string()),
        );
        if let Some(seed) = self.seed {
            root.insert("seed".into(), Value::Integer(seed as i64));
        }
        root.insert("jobs".into(), Value::Integer(self.jobs as i64));
        root.insert(
            "wall_time_seconds".into(),
            Value::Float(self.started.elapsed().as_secs_f64()),
        );
        let mut inputs = Table::new();
        for (path, digest) in self.inputs {
            inputs.insert(path, Value::String(digest));
        }
        root.insert("inputs".into(), Value::Table(inputs));
        root.insert("config".into(), Value::Table(self.config));

        let text = toml::to_string_pretty(&Value::Table(root)).map_err(|e| {
            rgcca::Error::Config {
                message: format!("could not serialise manifest: {e}"),
            }
        })?;
        let path = out_dir.join("manifest.toml");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}
