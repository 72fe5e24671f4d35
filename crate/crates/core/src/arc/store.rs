//! Append-only call files.
//!
//! Each call lives in `<call_id hex>.sva`: a sequence of
//! `len u32 | encoded envelope` records, synced before the frame is
//! acknowledged. Rejected calls are renamed to `<call_id hex>.sva.rejected`.
//! `nonces.idx` holds every archived nonce (16 bytes each) and `closed.idx`
//! one line `<file name> <close time micros>` per finished session.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use log::{info, warn};
use thiserror::Error;

use crate::chain::body::NONCE_LEN;
use crate::netproto::CallId;
use crate::time::Timestamp;

pub const CALL_EXT: &str = "sva";
pub const REJECTED_EXT: &str = "sva.rejected";
const NONCE_INDEX: &str = "nonces.idx";
const CLOSED_INDEX: &str = "closed.idx";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage capacity exhausted")]
    StorageFull,
    #[error("append after the final interval")]
    RejectedAfterFinal,
    #[error("nonce already archived")]
    NonceReused,
    #[error("a file for call {0} already exists")]
    CallExists(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Records of a call file. A trailing partial record is reported, not
/// returned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRecords<'a> {
    pub records: Vec<&'a [u8]>,
    /// Offset where an incomplete trailing record starts.
    pub torn_at: Option<usize>,
}

pub fn split_records(bytes: &[u8]) -> SplitRecords<'_> {
    let mut records = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let Some(len) = bytes.get(pos..pos + 4) else {
            return SplitRecords {
                records,
                torn_at: Some(pos),
            };
        };
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        let Some(rec) = bytes.get(pos + 4..pos + 4 + len) else {
            return SplitRecords {
                records,
                torn_at: Some(pos),
            };
        };
        records.push(rec);
        pos += 4 + len;
    }
    SplitRecords { records, torn_at: None }
}

pub fn call_file_name(call_id: &CallId) -> String {
    format!("{}.{CALL_EXT}", hex::encode(call_id))
}

#[derive(Debug)]
struct Index {
    nonces: HashSet<[u8; NONCE_LEN]>,
    nonce_file: File,
    used_bytes: u64,
}

#[derive(Debug)]
pub struct ArchiveStore {
    root: PathBuf,
    capacity: Option<u64>,
    index: Mutex<Index>,
}

/// A closed call as recorded in the close index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosedCall {
    pub file_name: String,
    pub closed_at: Timestamp,
}

impl ArchiveStore {
    /// Opens or creates a store. Torn trailing records left by a crash are
    /// truncated away. `capacity` bounds the total size of call files.
    pub fn open(root: impl Into<PathBuf>, capacity: Option<u64>) -> Result<Arc<Self>, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut nonces = HashSet::new();
        let nonce_path = root.join(NONCE_INDEX);
        if let Ok(raw) = fs::read(&nonce_path) {
            for chunk in raw.chunks_exact(NONCE_LEN) {
                nonces.insert(chunk.try_into().expect("chunk size"));
            }
        }
        let nonce_file = OpenOptions::new().create(true).append(true).open(&nonce_path)?;
        let mut used_bytes = 0;
        for entry in fs::read_dir(&root)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.ends_with(&format!(".{CALL_EXT}")) {
                recover_torn_tail(&path)?;
            }
            if name.ends_with(&format!(".{CALL_EXT}")) || name.ends_with(&format!(".{REJECTED_EXT}")) {
                used_bytes += fs::metadata(&path)?.len();
            }
        }
        Ok(Arc::new(Self {
            root,
            capacity,
            index: Mutex::new(Index {
                nonces,
                nonce_file,
                used_bytes,
            }),
        }))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lock(&self) -> MutexGuard<'_, Index> {
        self.index.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn nonce_seen(&self, nonce: &[u8; NONCE_LEN]) -> bool {
        self.lock().nonces.contains(nonce)
    }

    pub fn used_bytes(&self) -> u64 {
        self.lock().used_bytes
    }

    pub fn call_path(&self, call_id: &CallId) -> PathBuf {
        self.root.join(call_file_name(call_id))
    }

    /// Reserves the nonce and creates the call file in one step.
    pub fn create_call(self: &Arc<Self>, call_id: &CallId, nonce: &[u8; NONCE_LEN]) -> Result<CallWriter, StoreError> {
        let path = self.call_path(call_id);
        let mut idx = self.lock();
        if idx.nonces.contains(nonce) {
            return Err(StoreError::NonceReused);
        }
        let rejected = path.with_extension(REJECTED_EXT);
        if rejected.exists() {
            return Err(StoreError::CallExists(hex::encode(call_id)));
        }
        let file = match OpenOptions::new().create_new(true).append(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(StoreError::CallExists(hex::encode(call_id)))
            }
            Err(e) => return Err(e.into()),
        };
        idx.nonce_file.write_all(nonce)?;
        idx.nonce_file.sync_data()?;
        idx.nonces.insert(*nonce);
        drop(idx);
        Ok(CallWriter {
            store: Arc::clone(self),
            path,
            file,
            offset: 0,
            finished: false,
        })
    }

    fn reserve(&self, bytes: u64) -> Result<(), StoreError> {
        let mut idx = self.lock();
        if self.capacity.is_some_and(|cap| idx.used_bytes + bytes > cap) {
            return Err(StoreError::StorageFull);
        }
        idx.used_bytes += bytes;
        Ok(())
    }

    fn release(&self, bytes: u64) {
        let mut idx = self.lock();
        idx.used_bytes = idx.used_bytes.saturating_sub(bytes);
    }

    fn record_close(&self, file_name: &str, at: Timestamp) -> io::Result<()> {
        let _guard = self.lock();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(CLOSED_INDEX))?;
        writeln!(f, "{file_name} {}", at.as_micros())?;
        f.sync_data()
    }

    /// Every session close recorded so far, in order.
    pub fn closed_calls(&self) -> io::Result<Vec<ClosedCall>> {
        let f = match File::open(self.root.join(CLOSED_INDEX)) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            let parsed = line
                .split_once(' ')
                .and_then(|(name, t)| Some((name.to_owned(), Timestamp(t.trim().parse().ok()?))));
            match parsed {
                Some((file_name, closed_at)) => out.push(ClosedCall { file_name, closed_at }),
                None => warn!("skipping unreadable close index line {line:?}"),
            }
        }
        Ok(out)
    }

    pub fn read_file(&self, file_name: &str) -> io::Result<Vec<u8>> {
        let mut buf = Vec::new();
        File::open(self.root.join(file_name))?.read_to_end(&mut buf)?;
        Ok(buf)
    }
}

/// Truncates an incomplete trailing record. Returns the bytes removed.
pub fn recover_torn_tail(path: &Path) -> io::Result<u64> {
    let bytes = fs::read(path)?;
    let Some(torn) = split_records(&bytes).torn_at else {
        return Ok(0);
    };
    let removed = (bytes.len() - torn) as u64;
    warn!("{}: dropping {removed} bytes of a torn record", path.display());
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(torn as u64)?;
    f.sync_all()?;
    Ok(removed)
}

/// Appends to one open call file.
#[derive(Debug)]
pub struct CallWriter {
    store: Arc<ArchiveStore>,
    path: PathBuf,
    file: File,
    offset: u64,
    finished: bool,
}

impl CallWriter {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.offset
    }

    pub fn is_empty(&self) -> bool {
        self.offset == 0
    }

    /// Appends one record and syncs it; returns the record's offset.
    pub fn append(&mut self, encoded: &[u8], is_final: bool) -> Result<u64, StoreError> {
        if self.finished {
            return Err(StoreError::RejectedAfterFinal);
        }
        let len = u32::try_from(encoded.len()).map_err(|_| io::Error::other("record too large"))?;
        let total = 4 + encoded.len() as u64;
        self.store.reserve(total)?;
        let mut rec = Vec::with_capacity(total as usize);
        rec.extend_from_slice(&len.to_be_bytes());
        rec.extend_from_slice(encoded);
        let res = self.file.write_all(&rec).and_then(|_| self.file.sync_data());
        if let Err(e) = res {
            self.store.release(total);
            // Leave no partial record behind.
            let _ = self.file.set_len(self.offset);
            return Err(e.into());
        }
        let at = self.offset;
        self.offset += total;
        self.finished = is_final;
        Ok(at)
    }

    /// Closes a call, complete or not, and records the close time.
    pub fn close(self, at: Timestamp) -> io::Result<PathBuf> {
        let name = self.file_name();
        self.store.record_close(&name, at)?;
        info!("closed {name} ({} bytes)", self.offset);
        Ok(self.path)
    }

    /// Marks the call rejected by renaming its file.
    pub fn reject(self, at: Timestamp) -> io::Result<PathBuf> {
        let target = self.path.with_extension(REJECTED_EXT);
        drop(self.file);
        fs::rename(&self.path, &target)?;
        let name = target.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
        self.store.record_close(&name, at)?;
        warn!("rejected {name}");
        Ok(target)
    }

    fn file_name(&self) -> String {
        self.path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned()
    }
}
