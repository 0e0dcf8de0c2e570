//! Append-only CSV logs. Rows are flushed as written so a crashed run
//! still leaves its trace, and all float formatting is fixed so identical
//! runs produce identical bytes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub struct CsvLog {
    out: BufWriter<fs::File>,
}

impl CsvLog {
    pub fn create(path: &Path, header: &str) -> Result<CsvLog> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{header}")?;
        out.flush()?;
        Ok(CsvLog { out })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Fixed float rendering for log rows.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.6e}")
}
