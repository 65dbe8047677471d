//! Append-only JSONL event log. Every event is flushed and synced before the
//! call that produced it returns.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Contender, Phase, Side};
use crate::error::{Error, Result};
use crate::experiment::{Condition, SubjectSpec};
use crate::optimizer::OptimizerConfig;
use crate::params::UserParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        id: String,
        condition: Condition,
        seed: u64,
        subject: SubjectSpec,
        model_fingerprint: String,
        optimizer: OptimizerConfig,
    },
    DuelProposed {
        sequence: usize,
        phase: Phase,
        trial: usize,
        target_index: usize,
        first: Contender,
        second: Contender,
        first_on_left: bool,
    },
    ChoiceRecorded {
        sequence: usize,
        phase: Phase,
        trial: usize,
        side: Side,
        chose_first: bool,
    },
    PhaseAdvanced {
        from: Phase,
        to: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hilo_phi: Option<UserParams>,
    },
}

/// Where a session writes its events. The in-memory copy is always kept.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Vec<Event>,
    file: Option<(PathBuf, File)>,
}

impl EventLog {
    pub fn memory() -> Self {
        Self::default()
    }

    /// Creates a new log file; fails if it already exists.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().write(true).create_new(true).open(path)?;
        Ok(Self {
            events: Vec::new(),
            file: Some((path.to_path_buf(), file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn append(&mut self, event: Event) -> Result<()> {
        if let Some((_, file)) = &mut self.file {
            let mut line = serde_json::to_vec(&event)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        self.events.push(event);
        Ok(())
    }

    /// Memory log holding `events` without writing them anywhere.
    pub(crate) fn detached(events: Vec<Event>) -> Self {
        Self { events, file: None }
    }

    /// Reattaches an existing file for appending after a replay.
    pub(crate) fn attach(&mut self, path: &Path) -> Result<()> {
        let file = OpenOptions::new().append(true).open(path)?;
        self.file = Some((path.to_path_buf(), file));
        Ok(())
    }
}

/// Reads a log written by [`EventLog`]. A final line without its newline is
/// a torn write: it is dropped and, when `repair` is set, truncated away.
pub fn read_events(path: &Path, repair: bool) -> Result<Vec<Event>> {
    let mut file = OpenOptions::new().read(true).write(repair).open(path)?;
    let mut reader = BufReader::new(&mut file);
    let mut events = Vec::new();
    let mut good_len = 0u64;
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if buf.last() != Some(&b'\n') {
            break;
        }
        let event = serde_json::from_slice(&buf)
            .map_err(|e| Error::Format(format!("{}: line {line_no}: {e}", path.display())))?;
        events.push(event);
        good_len += n as u64;
    }
    drop(reader);
    if repair && file.metadata()?.len() != good_len {
        tracing::warn!(path = %path.display(), "dropping torn trailing log line");
        file.set_len(good_len)?;
        file.seek(SeekFrom::End(0))?;
    }
    Ok(events)
}

pub fn parse_events(text: &str) -> Result<Vec<Event>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", i + 1))))
        .collect()
}
