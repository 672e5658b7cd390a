use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use trajstat_core::error::Result;

/// Reproducibility header attached to every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: Value,
    pub model_hash: Option<String>,
}

impl Meta {
    pub fn new(config: &impl Serialize, model_hash: Option<String>) -> Self {
        Meta {
            tool: "trajstat",
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            model_hash,
        }
    }
}

/// One structured diagnostic line on stderr.
pub fn diagnostic(level: &str, event: &str, fields: Value) {
    let mut line = json!({ "level": level, "event": event });
    if let (Some(obj), Value::Object(extra)) = (line.as_object_mut(), fields) {
        obj.extend(extra);
    }
    eprintln!("{line}");
}

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn write_meta_sidecar(path: &Path, meta: &Meta) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(std::io::Error::other)?;
    std::fs::write(sidecar(path), text + "\n")?;
    Ok(())
}

/// `{"meta": ..., "payload": ...}`
pub fn write_json(path: &Path, meta: &Meta, payload: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let doc = json!({ "meta": meta, "payload": payload });
    let text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")?;
    diagnostic("info", "wrote", json!({ "path": path.display().to_string() }));
    Ok(())
}

/// Numeric CSV with `{:.16e}` floats; the header goes to `<path>.meta.json`.
pub fn write_csv(path: &Path, meta: &Meta, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(header).map_err(csv_io)?;
    for row in rows {
        w.write_record(row.iter().map(|v| float(*v))).map_err(csv_io)?;
    }
    w.flush()?;
    write_meta_sidecar(path, meta)?;
    diagnostic("info", "wrote", json!({ "path": path.display().to_string(), "rows": rows.len() }));
    Ok(())
}

/// One JSON value per line; the header goes to `<path>.meta.json`.
pub fn write_jsonl(path: &Path, meta: &Meta, lines: impl Iterator<Item = Value>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    let mut count = 0usize;
    for line in lines {
        writeln!(w, "{line}")?;
        count += 1;
    }
    w.flush()?;
    write_meta_sidecar(path, meta)?;
    diagnostic("info", "wrote", json!({ "path": path.display().to_string(), "lines": count }));
    Ok(())
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}
