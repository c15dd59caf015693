//! Writes CSV tables and JSON documents into the run's output directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use sgflow::output::{to_json_pretty, Table};

use crate::config::{Config, Experiment};
use crate::error::{CliError, OpContext};

/// Identifies the code and configuration that produced a file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metadata {
    pub experiment: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub git_describe: &'static str,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    metadata: &'a Metadata,
    results: &'a T,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    metadata: &'a Metadata,
    /// Seconds since the Unix epoch; the only nondeterministic field.
    timestamp: u64,
    files: &'a [String],
}

pub struct Emitter {
    dir: PathBuf,
    metadata: Metadata,
    files: Vec<String>,
}

impl Emitter {
    /// Creates the output directory and writes the resolved configuration
    /// (without the output directory itself).
    pub fn new(experiment: Experiment, config: &Config) -> Result<Self, CliError> {
        let dir = config.out_dir(experiment);
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        let metadata = Metadata {
            experiment: experiment.name(),
            seed: config.seed,
            config_hash: config.hash(experiment),
            git_describe: env!("SGFLOW_GIT_DESCRIBE"),
        };
        let mut emitter = Emitter {
            dir,
            metadata,
            files: Vec::new(),
        };
        let mut tree = serde_json::to_value(config).expect("config serializes");
        tree.as_object_mut().expect("object").remove("out");
        emitter.json("config.json", &tree)?;
        Ok(emitter)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let path = self.path(name);
        table.write_csv(&path).op("write csv")?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// Writes `{"metadata": …, "results": value}`.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let doc = Document {
            metadata: &self.metadata,
            results: value,
        };
        let text = to_json_pretty(&doc).op("serialize json")?;
        self.raw(name, &text)
    }

    pub fn raw(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// Writes `run.json` listing every file, with a timestamp.
    pub fn finish(self) -> Result<Vec<String>, CliError> {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let record = RunRecord {
            metadata: &self.metadata,
            timestamp,
            files: &self.files,
        };
        let text = to_json_pretty(&record).op("serialize json")?;
        let path = self.dir.join("run.json");
        std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })?;
        Ok(self.files)
    }
}
