//! Run context, output paths and JSON metadata sidecars.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Settings shared by every subcommand.
#[derive(Clone, Debug, Serialize)]
pub struct RunContext {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
    pub scale: u64,
}

impl RunContext {
    /// `out_dir/name`, creating the directory on first use.
    pub fn path(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating output directory {}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }

    /// Resolves an explicit `--out` or falls back to `out_dir/default_name`.
    pub fn output(&self, explicit: Option<&Path>, default_name: &str) -> Result<PathBuf> {
        match explicit {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                Ok(p.to_path_buf())
            }
            None => self.path(default_name),
        }
    }

    pub fn create(&self, path: &Path) -> Result<BufWriter<File>> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    /// Writes `<output stem>.json` next to `output`: tool version, full run
    /// configuration, the output checksum and command-specific `details`.
    pub fn sidecar(&self, output: &Path, details: Value) -> Result<PathBuf> {
        let path = output.with_extension("json");
        let record = json!({
            "tool": "skewkurt",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "argv": self.argv,
            "config": {
                "seed": self.seed,
                "threads": self.threads,
                "out_dir": self.out_dir,
                "scale": self.scale,
            },
            "output": {
                "path": output,
                "sha256": sha256_file(output)?,
            },
            "details": details,
        });
        write_json(&path, &record)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let read = f.read(&mut buf)?;
        if read == 0 {
            break;
        }
        h.update(&buf[..read]);
    }
    Ok(hex::encode(h.finalize()))
}

/// `1000000 → "1e6"`, `2500000 → "2.5e6"`.
pub fn sci(x: u64) -> String {
    if x == 0 {
        return "0".into();
    }
    let exp = (x as f64).log10().floor() as i32;
    let mantissa = x as f64 / 10f64.powi(exp);
    let m = format!("{mantissa:.3}");
    let m = m.trim_end_matches('0').trim_end_matches('.');
    format!("{m}e{exp}")
}

/// Stem of a file name without directories or extension.
pub fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

/// `0.9995 → "0.9995"` for file names.
pub fn q_label(q: f64) -> String {
    format!("{q}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scientific_labels() {
        assert_eq!(sci(1_000_000), "1e6");
        assert_eq!(sci(100_000_000), "1e8");
        assert_eq!(sci(25_000_000), "2.5e7");
        assert_eq!(sci(7), "7e0");
    }

    #[test]
    fn sidecar_records_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext {
            command: "test".into(),
            argv: vec![],
            seed: 1,
            threads: 1,
            out_dir: dir.path().into(),
            scale: 10,
        };
        let out = ctx.path("a.csv").unwrap();
        fs::write(&out, "x\n1\n").unwrap();
        let side = ctx.sidecar(&out, json!({"k": 1})).unwrap();
        let v: Value = serde_json::from_str(&fs::read_to_string(side).unwrap()).unwrap();
        assert_eq!(v["output"]["sha256"], sha256_file(&out).unwrap());
        assert_eq!(v["details"]["k"], 1);
    }
}
