use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Resolved against the manifest's directory.
    pub image_path: PathBuf,
    pub caption: String,
    /// 0 = no-hate, 1 = hate.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Entries removed for an empty caption or a missing image.
    pub dropped: usize,
}

/// Reads a JSON-lines manifest with fields `id`, `image_path`, `caption`,
/// `label`. Blank lines are skipped. Relative image paths are taken
/// relative to the manifest file.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    let mut dropped = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let v: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| bad("record is not an object".into()))?;
        let id = match obj.get("id") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(bad("missing or empty id".into())),
        };
        let label = match obj.get("label") {
            Some(Value::Number(n)) => n.as_u64(),
            Some(Value::String(s)) => s.trim().parse::<u64>().ok(),
            _ => None,
        };
        let label = match label {
            Some(l @ (0 | 1)) => l as usize,
            _ => {
                return Err(bad(format!(
                    "label must be 0 or 1, got {}",
                    obj.get("label")
                        .map_or("nothing".to_string(), |l| l.to_string())
                )))
            }
        };
        let image_path = match obj.get("image_path") {
            Some(Value::String(s)) if !s.is_empty() => Some(base.join(s)),
            Some(Value::String(_)) | Some(Value::Null) | None => None,
            Some(other) => return Err(bad(format!("image_path must be a string, got {other}"))),
        };
        let caption = match obj.get("caption") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(other) => return Err(bad(format!("caption must be a string, got {other}"))),
        };
        if !ids.insert(id.clone()) {
            return Err(bad(format!("duplicate id {id:?}")));
        }
        match image_path {
            Some(p) if !caption.trim().is_empty() && p.is_file() => entries.push(ManifestEntry {
                id,
                image_path: p,
                caption,
                label,
            }),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!(
            "{}: dropped {dropped} entries without both caption and image",
            path.display()
        );
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no complete image+caption entries",
            path.display()
        )));
    }
    Ok(Manifest { entries, dropped })
}

/// Writes entries as JSON lines. Image paths are written as given.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        let rec = json!({
            "id": e.id,
            "image_path": e.image_path.to_string_lossy(),
            "caption": e.caption,
            "label": e.label,
        });
        writeln!(out, "{rec}").expect("write to vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(lines: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.ppm"), b"P6 1 1 255\n\0\0\0").unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        (dir, path)
    }

    #[test]
    fn three_valid_lines() {
        let (dir, path) = setup(&[
            r#"{"id":"1","image_path":"a.ppm","caption":"x","label":0}"#,
            r#"{"id":"2","image_path":"a.ppm","caption":"y","label":"1"}"#,
            "",
            r#"{"id":"3","image_path":"a.ppm","caption":"z","label":1}"#,
        ]);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.dropped, 0);
        assert_eq!(m.entries[1].label, 1);
        assert_eq!(m.entries[0].image_path, dir.path().join("a.ppm"));
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["1", "2", "3"]);
    }

    #[test]
    fn incomplete_entries_are_dropped() {
        let (_dir, path) = setup(&[
            r#"{"id":"1","image_path":"a.ppm","caption":"","label":0}"#,
            r#"{"id":"2","image_path":"missing.ppm","caption":"y","label":1}"#,
            r#"{"id":"3","image_path":"a.ppm","label":1}"#,
            r#"{"id":"4","image_path":"a.ppm","caption":"ok","label":1}"#,
        ]);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.dropped, 3);
    }

    #[test]
    fn bad_label_names_the_line() {
        let (_dir, path) = setup(&[
            r#"{"id":"1","image_path":"a.ppm","caption":"x","label":0}"#,
            r#"{"id":"2","image_path":"a.ppm","caption":"x","label":"2"}"#,
        ]);
        match load_manifest(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_and_duplicates() {
        let (_dir, path) = setup(&["{not json"]);
        assert!(matches!(
            load_manifest(&path),
            Err(Error::Parse { line: 1, .. })
        ));
        let (_dir, path) = setup(&[
            r#"{"id":"1","image_path":"a.ppm","caption":"x","label":0}"#,
            r#"{"id":"1","image_path":"a.ppm","caption":"x","label":0}"#,
        ]);
        assert!(matches!(
            load_manifest(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn nothing_survives_is_empty_dataset() {
        let (_dir, path) = setup(&[r#"{"id":"1","image_path":"a.ppm","caption":" ","label":0}"#]);
        assert!(matches!(load_manifest(&path), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn write_then_load() {
        let (dir, _) = setup(&[]);
        let entries = vec![ManifestEntry {
            id: "q".into(),
            image_path: "a.ppm".into(),
            caption: "hello \"world\"".into(),
            label: 1,
        }];
        let path = dir.path().join("out.jsonl");
        write_manifest(&path, &entries).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.entries[0].caption, entries[0].caption);
        assert_eq!(m.entries[0].image_path, dir.path().join("a.ppm"));
    }
}
