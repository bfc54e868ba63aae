use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Format, RunConfig};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// One invocation's output directory, `<out>/<experiment>-<seed>-<hash>`.
pub struct RunDir {
    path: PathBuf,
    format: Format,
    experiment: String,
    hash: String,
}

impl RunDir {
    pub fn create(cfg: &RunConfig, experiment: &str) -> Result<Self, CliError> {
        let mut h = Sha256::new();
        h.update(experiment.as_bytes());
        h.update(b"\n");
        h.update(cfg.canonical().as_bytes());
        let hash: String = h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect();
        let path = Path::new(cfg.raw("out")).join(format!("{experiment}-{}-{hash}", cfg.seed()?));
        fs::create_dir_all(&path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
        let dir = Self {
            path,
            format: cfg.format()?,
            experiment: experiment.to_string(),
            hash,
        };
        dir.write_manifest(cfg)?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path.join(name);
        let mut f = fs::File::create(&p).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))?;
        f.write_all(bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))
    }

    fn write_manifest(&self, cfg: &RunConfig) -> Result<(), CliError> {
        let m = json!({
            "schema_version": SCHEMA_VERSION,
            "timestamp": timestamp(),
            "experiment": self.experiment,
            "seed": cfg.seed()?,
            "config_hash": self.hash,
            "config": cfg.entries(),
            "versions": {
                "shellgibbs": env!("CARGO_PKG_VERSION"),
            },
        });
        self.write_bytes("manifest.json", pretty(&m).as_bytes())
    }

    /// JSON report wrapped with schema version and timestamp; skipped for `format = csv`.
    pub fn json<T: Serialize>(&self, name: &str, report: &T) -> Result<(), CliError> {
        if !self.format.json() {
            return Ok(());
        }
        let body = serde_json::to_value(report).map_err(|e| CliError::Io(e.to_string()))?;
        let v = json!({
            "schema_version": SCHEMA_VERSION,
            "timestamp": timestamp(),
            "experiment": self.experiment,
            "report": body,
        });
        self.write_bytes(name, pretty(&v).as_bytes())
    }

    /// CSV with a header row; skipped for `format = json`.
    pub fn csv<I>(&self, name: &str, header: &[String], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        if !self.format.csv() {
            return Ok(());
        }
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            let cells: Vec<String> = row.into_iter().map(number).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        self.write_bytes(name, s.as_bytes())
    }

    pub fn text(&self, name: &str, body: &str) -> Result<(), CliError> {
        self.write_bytes(name, body.as_bytes())
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Shortest round-trip decimal, exponent form outside `[1e-4, 1e15)`.
pub fn number(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// `u_1_re,u_1_im,...` for `m` shells.
pub fn mode_header(m: usize) -> Vec<String> {
    (1..=m).flat_map(|n| [format!("u_{n}_re"), format!("u_{n}_im")]).collect()
}

/// Left-aligned two-column table.
pub fn table(title: &str, rows: &[(String, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = format!("{title}\n");
    for (k, v) in rows {
        let _ = writeln!(s, "  {k:<w$}  {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(number(0.0), "0");
        assert_eq!(number(0.5), "0.5");
        assert_eq!(number(-1e-300), "-1e-300");
        assert_eq!(number(2.5e20), "2.5e20");
        assert_eq!(number(1e-4), "0.0001");
    }

    #[test]
    fn header_layout() {
        assert_eq!(mode_header(2), vec!["u_1_re", "u_1_im", "u_2_re", "u_2_im"]);
    }
}
