use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::event::LogEntry;
use super::state::{SequenceError, Session};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("session log I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("session log is empty")]
    Empty,
    #[error("malformed session log entry at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("out-of-sequence session log entry at line {line}: {source}")]
    Sequence {
        line: usize,
        #[source]
        source: SequenceError,
    },
    /// The final entry was cut off mid-write. Everything before it is intact.
    #[error("session log truncated at line {line}; {valid_bytes} bytes are intact")]
    Truncated {
        line: usize,
        valid_bytes: u64,
        recovered: Box<Session>,
    },
}

struct Folded {
    session: Session,
    torn_tail: Option<(usize, u64)>,
}

fn fold(bytes: &[u8]) -> Result<Folded, LogError> {
    let mut session: Option<Session> = None;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|b| *b == b'\n') else {
            return match session {
                Some(session) => Ok(Folded {
                    session,
                    torn_tail: Some((line_no, offset as u64)),
                }),
                None => Err(LogError::Malformed {
                    line: line_no,
                    reason: "first entry is incomplete".into(),
                }),
            };
        };
        let line = &rest[..end];
        let entry: LogEntry = serde_json::from_slice(line).map_err(|e| LogError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        match session.as_mut() {
            None => {
                session = Some(Session::start(&entry).map_err(|source| LogError::Sequence { line: line_no, source })?);
            }
            Some(s) => s
                .apply(&entry)
                .map_err(|source| LogError::Sequence { line: line_no, source })?,
        }
        offset += end + 1;
    }
    session
        .map(|session| Folded { session, torn_tail: None })
        .ok_or(LogError::Empty)
}

/// Rebuilds a session from its log. A torn final entry yields [`LogError::Truncated`],
/// which carries the session recovered from the intact prefix.
pub fn load_session(mut reader: impl Read) -> Result<Session, LogError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let folded = fold(&bytes)?;
    match folded.torn_tail {
        None => Ok(folded.session),
        Some((line, valid_bytes)) => Err(LogError::Truncated {
            line,
            valid_bytes,
            recovered: Box::new(folded.session),
        }),
    }
}

pub fn load_session_file(path: &Path) -> Result<Session, LogError> {
    load_session(File::open(path)?)
}

/// The log text that rebuilds `session`: one JSON object per line.
pub fn serialize_session(session: &Session) -> String {
    let mut out = String::new();
    for entry in &session.history {
        out.push_str(&serde_json::to_string(entry).expect("log entries always serialize"));
        out.push('\n');
    }
    out
}

/// Append-only writer for one session's log file.
#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    file: File,
}

impl SessionLog {
    /// Creates a new log; fails if the file already exists.
    pub fn create(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().append(true).create_new(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Reopens an existing log for appending. A torn final entry is cut off first.
    pub fn reopen(path: &Path) -> Result<(Self, Session), LogError> {
        let bytes = std::fs::read(path)?;
        let folded = fold(&bytes)?;
        let file = OpenOptions::new().append(true).open(path)?;
        if let Some((_, valid_bytes)) = folded.torn_tail {
            file.set_len(valid_bytes)?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            folded.session,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one entry as a single line and flushes it.
    pub fn append(&mut self, entry: &LogEntry) -> io::Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()
    }
}
