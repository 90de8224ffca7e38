//! Byte-stable output helpers shared by every writer.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Pretty JSON with object keys sorted and a trailing newline.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // serde_json::Map is a BTreeMap here, so the round-trip through Value sorts keys.
    let v = serde_json::to_value(value)
        .map_err(|e| Error::InvalidArgument(format!("unserializable value: {e}")))?;
    let mut s = serde_json::to_string_pretty(&v)
        .map_err(|e| Error::InvalidArgument(format!("unserializable value: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Compact single-line canonical JSON (sorted keys), used for hashing.
pub fn canonical_json_compact<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| Error::InvalidArgument(format!("unserializable value: {e}")))?;
    serde_json::to_string(&v).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Renders a GitHub-flavoured markdown table.
pub fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let esc = |s: &str| s.replace('|', "\\|").replace('\n', " ");
    let mut out = String::new();
    out.push_str("| ");
    out.push_str(&header.iter().map(|h| esc(h)).collect::<Vec<_>>().join(" | "));
    out.push_str(" |\n|");
    for _ in header {
        out.push_str("---|");
    }
    out.push('\n');
    for row in rows {
        out.push_str("| ");
        out.push_str(&row.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
        out.push_str(" |\n");
    }
    out
}

/// Serializes rows to CSV text with a header row.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Threshold labels as printed in tables: `0.7`, `0.75`, `0.8`.
pub fn format_threshold(th: f64) -> String {
    let s = format!("{th:.4}");
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn json_keys_sorted() {
        let mut m = HashMap::new();
        m.insert("zeta", 1);
        m.insert("alpha", 2);
        m.insert("mid", 3);
        let s = canonical_json(&m).unwrap();
        let a = s.find("alpha").unwrap();
        let b = s.find("mid").unwrap();
        let c = s.find("zeta").unwrap();
        assert!(a < b && b < c);
        assert!(s.ends_with('\n'));
    }

    #[test]
    fn thresholds() {
        assert_eq!(format_threshold(0.7), "0.7");
        assert_eq!(format_threshold(0.75), "0.75");
        assert_eq!(format_threshold(1.0), "1.0");
        assert_eq!(format_threshold(-0.1), "-0.1");
    }

    #[test]
    fn markdown_escapes_pipes() {
        let t = markdown_table(&["a".into(), "b".into()], &[vec!["x|y".into(), "z".into()]]);
        assert_eq!(t, "| a | b |\n|---|---|\n| x\\|y | z |\n");
    }

    #[test]
    fn atomic_write_creates_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_atomic(&p, b"hi").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hi");
    }
}
