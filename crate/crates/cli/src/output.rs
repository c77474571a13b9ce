use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

/// Shortest decimal that round-trips to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Files written by one invocation; all of them are removed if it fails.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
    meta: String,
}

impl Artifacts {
    pub fn new(dir: &Path, config_toml: &str, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let mut hasher = Sha256::new();
        hasher.update(config_toml.as_bytes());
        hasher.update(b"\n");
        hasher.update(command.as_bytes());
        let hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        let meta = format!(
            "# eyewitness {} config-sha256={hash} command=\"{command}\"",
            env!("CARGO_PKG_VERSION")
        );
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            meta,
        })
    }

    fn target(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        path
    }

    /// Writes a CSV file: metadata comment line, header, rows.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<PathBuf, CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.target(name);
        let mut buf = Vec::new();
        buf.extend_from_slice(self.meta.as_bytes());
        buf.push(b'\n');
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        fs::write(&path, buf)?;
        Ok(path)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.target(name);
        fs::write(&path, format!("{}\n{body}", self.meta))?;
        Ok(path)
    }

    pub fn remove_all(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}
