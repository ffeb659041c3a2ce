use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::Format;

/// Writes artifacts under one directory in the requested formats.
#[derive(Clone, Debug)]
pub struct Sink {
    pub dir: PathBuf,
    pub format: Format,
}

impl Sink {
    pub fn new(dir: &Path, format: Format) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            format,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// `name.csv` with the given header, skipped when CSV is not requested.
    pub fn csv<R: AsRef<[String]>>(&self, name: &str, header: &[&str], rows: &[R]) -> anyhow::Result<()> {
        if !self.format.csv() {
            return Ok(());
        }
        let path = self.path(&format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.as_ref())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Pretty-printed `name.json`, skipped when JSON is not requested.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        if !self.format.json() {
            return Ok(());
        }
        let path = self.path(&format!("{name}.json"));
        let mut f = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}
