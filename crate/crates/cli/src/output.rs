//! Output directory bookkeeping: every file written through [`Outputs`] is
//! hashed and listed in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use snls_core::control::ControlPath;
use snls_core::grid::Field;
use snls_core::integrator::Trajectory;

use crate::error::CliError;

pub struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Outputs, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn track(&mut self, path: PathBuf) {
        if !self.files.contains(&path) {
            self.files.push(path);
        }
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.dir.join(name);
        fs::write(&p, text)?;
        self.track(p);
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    /// RFC-4180 CSV with a header row.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let p = self.dir.join(name);
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.track(p);
        Ok(())
    }

    pub fn trajectory_csv(&mut self, name: &str, traj: &Trajectory) -> Result<(), CliError> {
        let rows: Vec<Vec<String>> = (0..traj.times.len())
            .map(|i| {
                vec![
                    num(traj.times[i]),
                    num(traj.mass[i]),
                    num(traj.h1norm[i]),
                    num(traj.hamiltonian[i]),
                ]
            })
            .collect();
        self.csv(name, &["t", "mass", "h1_norm", "hamiltonian"], &rows)
    }

    pub fn field(&mut self, name: &str, field: &Field, t: f64) -> Result<(), CliError> {
        let (a, b) = snls_core::snapshot::write_field(&self.dir.join(name), field, t)?;
        self.track(a);
        self.track(b);
        Ok(())
    }

    pub fn control(&mut self, name: &str, control: &ControlPath) -> Result<(), CliError> {
        for p in control.save(&self.dir.join(name))? {
            self.track(p);
        }
        Ok(())
    }

    /// Writes `manifest.json`: the echoed configuration, versions, seed,
    /// worker count, wall time and the SHA-256 of every output.
    pub fn finish(mut self, subcommand: &str, config_echo: &str, seed: u64, workers: Option<usize>, wall: f64) -> Result<PathBuf, CliError> {
        self.text("config.toml", config_echo)?;
        let mut listed = Vec::new();
        let mut files = self.files.clone();
        files.sort();
        for p in &files {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            listed.push(json!({
                "path": rel,
                "bytes": fs::metadata(p)?.len(),
                "sha256": sha256_file(p)?,
            }));
        }
        let config: Value = toml::from_str::<toml::Table>(config_echo)
            .map(|t| serde_json::to_value(t).unwrap_or(Value::Null))
            .unwrap_or(Value::Null);
        let manifest = json!({
            "tool": "snls",
            "subcommand": subcommand,
            "versions": {
                "snls-cli": env!("CARGO_PKG_VERSION"),
                "snls-core": snls_core::VERSION,
            },
            "seed": seed,
            "workers": workers,
            "config": config,
            "outputs": listed,
            "wall_time_s": wall,
        });
        let p = self.dir.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        fs::write(&p, s)?;
        Ok(p)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
