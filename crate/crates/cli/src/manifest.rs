//! Corpus manifests: UTF-8 TSV with columns id, emissions path, and an
//! optional reference transcript. Paths resolve relative to the manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub reference: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    /// Parse and sort by utterance id; ids must be unique and paths non-empty.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("failed to read manifest {path:?}: {e}")))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(CliError::runtime(format!(
                    "manifest line {}: expected 2 or 3 tab-separated fields, found {}",
                    idx + 1,
                    fields.len()
                )));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(CliError::runtime(format!(
                    "manifest line {}: empty utterance id",
                    idx + 1
                )));
            }
            if !seen.insert(id.to_string()) {
                return Err(CliError::runtime(format!(
                    "manifest line {}: duplicate utterance id {id:?}",
                    idx + 1
                )));
            }
            let rel = fields[1].trim();
            if rel.is_empty() {
                return Err(CliError::runtime(format!(
                    "manifest line {}: empty emissions path",
                    idx + 1
                )));
            }
            let reference = fields
                .get(2)
                .map(|r| r.to_string())
                .filter(|r| !r.is_empty());
            entries.push(ManifestEntry {
                id: id.to_string(),
                path: base.join(rel),
                reference,
            });
        }
        if entries.is_empty() {
            return Err(CliError::runtime(format!("manifest {path:?} is empty")));
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(CorpusManifest { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_and_sorts_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "b\tb.fltp\thello world").unwrap();
        writeln!(f, "a\ta.fltp\t").unwrap();
        writeln!(f, "c\tsub/c.fltp").unwrap();
        drop(f);
        let m = CorpusManifest::load(&path).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[0].id, "a");
        assert_eq!(m.entries[0].reference, None);
        assert_eq!(m.entries[1].reference.as_deref(), Some("hello world"));
        assert_eq!(m.entries[2].path, dir.path().join("sub/c.fltp"));
    }

    #[test]
    fn rejects_duplicates_and_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        fs::write(&path, "a\ta.fltp\na\tb.fltp\n").unwrap();
        assert!(CorpusManifest::load(&path).is_err());
        fs::write(&path, "only-one-field\n").unwrap();
        assert!(CorpusManifest::load(&path).is_err());
        fs::write(&path, "").unwrap();
        assert!(CorpusManifest::load(&path).is_err());
    }
}
