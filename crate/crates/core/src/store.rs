//! Durable event log and snapshots.
//!
//! Log format: one event per line, `<canonical JSON>#<crc32 hex>`. Every
//! event carries the seq of its commit's first event and an end marker, so a
//! reopened log can be cut back to the last complete commit.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::Event;
use crate::state::{fold, FoldError, State};
use crate::value;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full")]
    StorageFull,
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("log refused further appends after an earlier failure")]
    Poisoned,
    #[error(transparent)]
    Fold(#[from] FoldError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

fn classify_io(err: io::Error) -> StoreError {
    if err.kind() == io::ErrorKind::StorageFull || err.raw_os_error() == Some(28) {
        StoreError::StorageFull
    } else {
        StoreError::Io(err)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FsyncPolicy {
    /// fsync after every commit.
    #[default]
    Always,
    Never,
}

pub fn encode_line(event: &Event) -> String {
    let json = value::to_canonical(event);
    let crc = crc32fast::hash(json.as_bytes());
    format!("{json}#{crc:08x}")
}

pub fn decode_line(line: &str) -> Result<Event, String> {
    let (json, crc) = line.rsplit_once('#').ok_or("missing checksum")?;
    let expected = u32::from_str_radix(crc, 16).map_err(|_| format!("bad checksum field {crc:?}"))?;
    if crc.len() != 8 || crc32fast::hash(json.as_bytes()) != expected {
        return Err("checksum mismatch".to_string());
    }
    value::from_canonical(json).map_err(|e| format!("bad event: {e}"))
}

/// Result of scanning raw log bytes.
struct Scan {
    events: Vec<Event>,
    lines: Vec<String>,
    /// Byte length of the prefix that ends on a commit boundary.
    durable_len: usize,
}

fn scan(bytes: &[u8]) -> Result<Scan, StoreError> {
    let text = String::from_utf8_lossy(bytes);
    let mut events = Vec::new();
    let mut lines = Vec::new();
    let mut durable = (0usize, 0usize); // (events, bytes)
    let mut offset = 0usize;
    let segments: Vec<&str> = text.split_inclusive('\n').collect();
    for (index, segment) in segments.iter().enumerate() {
        let is_last = index + 1 == segments.len();
        let terminated = segment.ends_with('\n');
        let line = segment.trim_end_matches('\n');
        let decoded = if terminated { decode_line(line) } else { Err("unterminated line".to_string()) };
        let event = match decoded {
            Ok(event) => event,
            // a torn final write is recoverable; anything earlier is not
            Err(_) if is_last => break,
            Err(reason) => return Err(StoreError::CorruptLog { line: index + 1, reason }),
        };
        let expected_seq = events.len() as u64 + 1;
        if event.seq != expected_seq {
            return Err(StoreError::CorruptLog {
                line: index + 1,
                reason: format!("seq {} where {expected_seq} expected", event.seq),
            });
        }
        offset += segment.len();
        let ends_commit = event.tx_end;
        events.push(event);
        lines.push(line.to_string());
        if ends_commit {
            durable = (events.len(), offset);
        }
    }
    events.truncate(durable.0);
    lines.truncate(durable.0);
    Ok(Scan { events, lines, durable_len: durable.1 })
}

/// Reads a log file strictly: the whole file must be complete commits.
pub fn read_log(path: &Path) -> Result<Vec<Event>, StoreError> {
    let bytes = fs::read(path)?;
    let scan = scan(&bytes)?;
    if scan.durable_len != bytes.len() {
        return Err(StoreError::CorruptLog { line: scan.lines.len() + 1, reason: "incomplete trailing commit".into() });
    }
    Ok(scan.events)
}

/// Raw lines of a log file, for byte-level comparison.
pub fn read_lines(path: &Path) -> Result<Vec<String>, StoreError> {
    let bytes = fs::read(path)?;
    let scan = scan(&bytes)?;
    if scan.durable_len != bytes.len() {
        return Err(StoreError::CorruptLog { line: scan.lines.len() + 1, reason: "incomplete trailing commit".into() });
    }
    Ok(scan.lines)
}

#[derive(Debug)]
pub struct EventLog {
    file: Option<File>,
    path: Option<PathBuf>,
    fsync: FsyncPolicy,
    events: Vec<Event>,
    lines: Vec<String>,
    poisoned: bool,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog { file: None, path: None, fsync: FsyncPolicy::Never, events: Vec::new(), lines: Vec::new(), poisoned: false }
    }

    /// Opens (or creates) a log file. A torn final commit is cut off; any
    /// other damage is `CorruptLog`.
    pub fn open(path: impl AsRef<Path>, fsync: FsyncPolicy) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let scan = scan(&bytes)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).read(true).write(true).truncate(false).open(&path)?;
        if scan.durable_len != bytes.len() {
            file.set_len(scan.durable_len as u64)?;
            file.sync_all()?;
        }
        let mut file = file;
        io::Seek::seek(&mut file, io::SeekFrom::End(0))?;
        Ok(EventLog { file: Some(file), path: Some(path), fsync, events: scan.events, lines: scan.lines, poisoned: false })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map(|e| e.seq).unwrap_or(0)
    }

    /// Appends one commit atomically and returns the last seq written.
    pub fn append(&mut self, commit: &[Event]) -> Result<u64, StoreError> {
        if self.poisoned {
            return Err(StoreError::Poisoned);
        }
        if commit.is_empty() {
            return Ok(self.last_seq());
        }
        for (i, event) in commit.iter().enumerate() {
            let expected = self.last_seq() + 1 + i as u64;
            let ends = i + 1 == commit.len();
            if event.seq != expected || event.tx != commit[0].seq || event.tx_end != ends {
                return Err(StoreError::CorruptLog {
                    line: self.events.len() + i + 1,
                    reason: format!("commit framing broken at seq {}", event.seq),
                });
            }
        }
        let lines: Vec<String> = commit.iter().map(encode_line).collect();
        if let Some(file) = self.file.as_mut() {
            let mut buf = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
            for line in &lines {
                buf.push_str(line);
                buf.push('\n');
            }
            let written = file.write_all(buf.as_bytes()).and_then(|_| file.flush()).and_then(|_| match self.fsync {
                FsyncPolicy::Always => file.sync_data(),
                FsyncPolicy::Never => Ok(()),
            });
            if let Err(e) = written {
                self.poisoned = true;
                return Err(classify_io(e));
            }
        }
        self.events.extend_from_slice(commit);
        self.lines.extend(lines);
        Ok(self.last_seq())
    }

    /// Re-reads the backing file and checks it against what this handle
    /// wrote. A mismatch poisons the log.
    pub fn verify(&mut self) -> Result<(), StoreError> {
        let Some(path) = self.path.clone() else { return Ok(()) };
        let on_disk = match read_lines(&path) {
            Ok(lines) => lines,
            Err(e) => {
                self.poisoned = true;
                return Err(e);
            }
        };
        if on_disk != self.lines {
            self.poisoned = true;
            return Err(StoreError::CorruptLog { line: 0, reason: "file diverged from written commits".into() });
        }
        Ok(())
    }

    /// Folds events `1..=up_to` (all when `None`).
    pub fn replay(&self, up_to: Option<u64>) -> Result<State, StoreError> {
        let limit = up_to.unwrap_or(u64::MAX);
        Ok(fold(State::new(), self.events.iter().take_while(|e| e.seq <= limit))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Snapshot {
    pub as_of_seq: u64,
    pub state: State,
}

impl Snapshot {
    pub fn of(state: &State) -> Self {
        Snapshot { as_of_seq: state.last_seq, state: state.clone() }
    }

    pub fn to_canonical(&self) -> String {
        value::to_canonical(self)
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        value::from_canonical(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        fs::write(path, self.to_canonical()).map_err(classify_io)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path)?;
        Snapshot::parse(&text).map_err(|e| StoreError::CorruptLog { line: 0, reason: format!("bad snapshot: {e}") })
    }

    /// Folds the events after the snapshot onto it.
    pub fn fold_tail(&self, events: &[Event]) -> Result<State, StoreError> {
        Ok(fold(self.state.clone(), events.iter().filter(|e| e.seq > self.as_of_seq))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventBody;
    use crate::ids::WorkerId;
    use crate::model::Worker;

    fn worker_event(seq: u64, tx: u64, tx_end: bool) -> Event {
        Event {
            seq,
            timestamp: seq * 10,
            tx,
            tx_end,
            body: EventBody::WorkerRegistered {
                worker: Worker {
                    id: WorkerId(seq),
                    handle: format!("w{seq}"),
                    assigned_microtask_id: None,
                    completed_count: 0,
                    skip_count: 0,
                },
            },
        }
    }

    /// Commits of sizes 1, 3, 2.
    fn sample_commits() -> Vec<Vec<Event>> {
        vec![
            vec![worker_event(1, 1, true)],
            vec![worker_event(2, 2, false), worker_event(3, 2, false), worker_event(4, 2, true)],
            vec![worker_event(5, 5, false), worker_event(6, 5, true)],
        ]
    }

    #[test]
    fn append_to_empty_log_assigns_consecutive_seqs() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = EventLog::open(dir.path().join("events.log"), FsyncPolicy::Never).unwrap();
        let commit = vec![worker_event(1, 1, false), worker_event(2, 1, false), worker_event(3, 1, true)];
        assert_eq!(log.append(&commit).unwrap(), 3);
        let seqs: Vec<u64> = log.events().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3]);
        let reopened = EventLog::open(dir.path().join("events.log"), FsyncPolicy::Never).unwrap();
        assert_eq!(reopened.lines(), log.lines());
    }

    #[test]
    fn open_creates_missing_directories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data/nested/events.log");
        let mut log = EventLog::open(&path, FsyncPolicy::Never).unwrap();
        log.append(&[worker_event(1, 1, true)]).unwrap();
        assert!(path.is_file());
    }

    #[test]
    fn line_format_is_json_hash_crc() {
        let line = encode_line(&worker_event(1, 1, true));
        let (json, crc) = line.rsplit_once('#').unwrap();
        assert_eq!(crc.len(), 8);
        assert_eq!(format!("{:08x}", crc32fast::hash(json.as_bytes())), crc);
        assert!(json.starts_with(r#"{"kind":"WorkerRegistered","payload":"#));
        assert_eq!(decode_line(&line).unwrap(), worker_event(1, 1, true));
    }

    /// Cuts the file at every byte offset and checks that reopening keeps
    /// exactly the commits that were fully written before the cut.
    #[test]
    fn reopened_log_ends_on_commit_boundary_at_every_kill_point() {
        let dir = tempfile::tempdir().unwrap();
        let full_path = dir.path().join("full.log");
        let mut log = EventLog::open(&full_path, FsyncPolicy::Never).unwrap();
        let mut boundaries = vec![(0usize, 0usize)];
        for commit in sample_commits() {
            log.append(&commit).unwrap();
            boundaries.push((fs::metadata(&full_path).unwrap().len() as usize, log.events().len()));
        }
        let bytes = fs::read(&full_path).unwrap();
        for cut in 0..=bytes.len() {
            let path = dir.path().join(format!("cut{cut}.log"));
            fs::write(&path, &bytes[..cut]).unwrap();
            let reopened = EventLog::open(&path, FsyncPolicy::Never).unwrap();
            let (durable_bytes, durable_events) =
                *boundaries.iter().rev().find(|(b, _)| *b <= cut).unwrap();
            assert_eq!(reopened.events().len(), durable_events, "cut at {cut}");
            assert_eq!(fs::metadata(&path).unwrap().len() as usize, durable_bytes, "cut at {cut}");
        }
    }

    #[test]
    fn damaged_middle_line_is_corrupt_and_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        let mut log = EventLog::open(&path, FsyncPolicy::Never).unwrap();
        for commit in sample_commits() {
            log.append(&commit).unwrap();
        }
        let mut text = fs::read_to_string(&path).unwrap();
        let flip = text.find("\"handle\":\"w2\"").unwrap() + 11;
        text.replace_range(flip..flip + 1, "X");
        fs::write(&path, &text).unwrap();

        assert!(matches!(EventLog::open(&path, FsyncPolicy::Never), Err(StoreError::CorruptLog { line: 2, .. })));
        assert!(matches!(log.verify(), Err(StoreError::CorruptLog { .. })));
        assert!(matches!(log.append(&[worker_event(7, 7, true)]), Err(StoreError::Poisoned)));
    }

    #[test]
    fn replay_of_empty_log_is_empty_state() {
        assert_eq!(EventLog::in_memory().replay(None).unwrap(), State::new());
    }

    #[test]
    fn snapshot_plus_tail_equals_full_fold() {
        let mut log = EventLog::in_memory();
        for commit in sample_commits() {
            log.append(&commit).unwrap();
        }
        let full = log.replay(None).unwrap();
        for cut in 0..=6 {
            let snapshot = Snapshot::of(&log.replay(Some(cut)).unwrap());
            let reparsed = Snapshot::parse(&snapshot.to_canonical()).unwrap();
            assert_eq!(reparsed.fold_tail(log.events()).unwrap().canonical(), full.canonical());
        }
    }

    #[test]
    fn misframed_commit_is_rejected() {
        let mut log = EventLog::in_memory();
        assert!(log.append(&[worker_event(1, 1, false)]).is_err());
        assert!(log.append(&[worker_event(2, 2, true)]).is_err());
        assert_eq!(log.last_seq(), 0);
    }
}
