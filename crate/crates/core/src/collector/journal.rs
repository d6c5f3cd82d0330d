//! Append-only JSONL journal with a sidecar for cells given up on.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decode_line, to_canonical_line, CaptionRecord, Record, ScoreRecord};

/// Records that carry a stable identity for resume bookkeeping.
pub trait Journaled: Record {
    fn journal_key(&self) -> Vec<String>;
}

impl Journaled for ScoreRecord {
    fn journal_key(&self) -> Vec<String> {
        score_key(
            self.setting.as_str(),
            &self.image_id,
            self.generator.as_str(),
            self.evaluator.as_str(),
        )
    }
}

impl Journaled for CaptionRecord {
    fn journal_key(&self) -> Vec<String> {
        caption_key(&self.image_id, self.generator.as_str())
    }
}

pub fn score_key(setting: &str, image_id: &str, generator: &str, evaluator: &str) -> Vec<String> {
    vec![setting.into(), image_id.into(), generator.into(), evaluator.into()]
}

pub fn caption_key(image_id: &str, generator: &str) -> Vec<String> {
    vec![image_id.into(), generator.into()]
}

/// A job that exhausted its retries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingEntry {
    pub key: Vec<String>,
    pub attempts: u32,
    pub error: String,
}

impl Record for MissingEntry {
    fn validate(&self) -> Result<()> {
        if self.key.is_empty() {
            return Err(Error::InvalidRecord("missing entry has an empty key".into()));
        }
        Ok(())
    }
}

/// Where the sidecar for `journal` lives.
pub fn missing_path(journal: &Path) -> PathBuf {
    let mut name = journal.as_os_str().to_owned();
    name.push(".missing.jsonl");
    PathBuf::from(name)
}

/// Reads a JSONL log, repairing a torn final line.
///
/// A last line without its newline is the trace of an interrupted append. If
/// it still decodes it is kept and terminated; otherwise it is cut off.
fn recover<T: Record>(path: &Path) -> Result<Vec<T>> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let mut records = Vec::new();
    let head = std::str::from_utf8(&bytes[..complete]).map_err(|e| Error::MalformedLine {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    for (idx, line) in head.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(decode_line(path, idx + 1, line)?);
    }
    if complete < bytes.len() {
        let line_no = head.lines().count() + 1;
        let tail = std::str::from_utf8(&bytes[complete..]).ok();
        match tail.map(|t| decode_line::<T>(path, line_no, t)) {
            Some(Ok(rec)) => {
                append_raw(path, b"\n")?;
                records.push(rec);
            }
            _ => {
                log::warn!("{}: dropping torn last line {line_no}", path.display());
                let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
                f.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(records)
}

fn append_raw(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// An open journal plus its missing-cell sidecar.
pub struct Journal<T> {
    path: PathBuf,
    file: File,
    missing_file: File,
    done: HashSet<Vec<String>>,
    records: Vec<T>,
    missing: Vec<MissingEntry>,
}

impl<T: Journaled> Journal<T> {
    /// Opens (creating if needed) and replays an existing journal.
    pub fn open(path: &Path) -> Result<Self> {
        let records: Vec<T> = recover(path)?;
        let side = missing_path(path);
        let missing: Vec<MissingEntry> = recover(&side)?;
        let mut done = HashSet::new();
        for r in &records {
            let key = r.journal_key();
            if !done.insert(key.clone()) {
                return Err(Error::DuplicateKey(format!("{} in {}", key.join("/"), path.display())));
            }
        }
        for m in &missing {
            // A cell that was recorded after an earlier give-up counts as done once.
            done.insert(m.key.clone());
        }
        Ok(Journal {
            file: open_append(path)?,
            missing_file: open_append(&side)?,
            path: path.to_path_buf(),
            done,
            records,
            missing,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_done(&self, key: &[String]) -> bool {
        self.done.contains(key)
    }

    pub fn records(&self) -> &[T] {
        &self.records
    }

    pub fn missing(&self) -> &[MissingEntry] {
        &self.missing
    }

    pub fn into_records(self) -> Vec<T> {
        self.records
    }

    /// Appends one record and flushes it to the OS before returning.
    pub fn append(&mut self, record: T) -> Result<()> {
        let key = record.journal_key();
        if self.done.contains(&key) {
            return Err(Error::DuplicateKey(key.join("/")));
        }
        let mut line = to_canonical_line(&record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(Error::Journal)?;
        self.file.flush().map_err(Error::Journal)?;
        self.done.insert(key);
        self.records.push(record);
        Ok(())
    }

    pub fn append_missing(&mut self, entry: MissingEntry) -> Result<()> {
        let mut line = to_canonical_line(&entry)?;
        line.push('\n');
        self.missing_file.write_all(line.as_bytes()).map_err(Error::Journal)?;
        self.missing_file.flush().map_err(Error::Journal)?;
        self.done.insert(entry.key.clone());
        self.missing.push(entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelId, Setting};

    fn rec(img: &str, raw: u32) -> ScoreRecord {
        ScoreRecord::new(img, ModelId::new("g").unwrap(), ModelId::new("e").unwrap(), Setting::ReferenceFree, raw)
            .unwrap()
    }

    #[test]
    fn reopen_replays_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        {
            let mut j: Journal<ScoreRecord> = Journal::open(&p).unwrap();
            j.append(rec("a", 10)).unwrap();
            j.append(rec("b", 20)).unwrap();
            j.append_missing(MissingEntry { key: rec("c", 0).journal_key(), attempts: 4, error: "x".into() })
                .unwrap();
        }
        let j: Journal<ScoreRecord> = Journal::open(&p).unwrap();
        assert_eq!(j.records().len(), 2);
        assert!(j.is_done(&rec("a", 0).journal_key()));
        assert!(j.is_done(&rec("c", 0).journal_key()));
        assert!(!j.is_done(&rec("d", 0).journal_key()));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        let full = format!("{}\n", to_canonical_line(&rec("a", 10)).unwrap());
        std::fs::write(&p, format!("{full}{{\"image_id\":\"b\",\"gen")).unwrap();
        let j: Journal<ScoreRecord> = Journal::open(&p).unwrap();
        assert_eq!(j.records().len(), 1);
        drop(j);
        assert_eq!(std::fs::read_to_string(&p).unwrap(), full);
    }

    #[test]
    fn unterminated_but_complete_tail_is_kept() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        let line = to_canonical_line(&rec("a", 10)).unwrap();
        std::fs::write(&p, &line).unwrap();
        let mut j: Journal<ScoreRecord> = Journal::open(&p).unwrap();
        j.append(rec("b", 5)).unwrap();
        drop(j);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(&format!("{line}\n")));
    }

    #[test]
    fn write_failure_is_a_journal_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        let mut j: Journal<ScoreRecord> = Journal::open(&p).unwrap();
        j.file = File::open(&p).unwrap();
        let err = j.append(rec("a", 1)).unwrap_err();
        assert!(matches!(err, Error::Journal(_)));
        assert_eq!(err.exit_code(), 2);
        assert!(!j.is_done(&rec("a", 1).journal_key()));
    }

    #[test]
    fn corrupt_interior_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        std::fs::write(&p, "not json\n").unwrap();
        assert!(matches!(
            Journal::<ScoreRecord>::open(&p),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn every_prefix_is_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        let lines: Vec<String> = (0..5).map(|i| to_canonical_line(&rec(&format!("i{i}"), i)).unwrap()).collect();
        let text = lines.iter().map(|l| format!("{l}\n")).collect::<String>();
        for cut in 0..=text.len() {
            std::fs::write(&p, &text.as_bytes()[..cut]).unwrap();
            let _ = std::fs::remove_file(missing_path(&p));
            let j = Journal::<ScoreRecord>::open(&p).unwrap();
            assert!(j.records().len() <= 5);
        }
    }
}
