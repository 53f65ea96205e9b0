//! The personal data store: one append-only JSON-lines log per stream plus a
//! JSON manifest of registered streams.
//!
//! ```text
//! <root>/manifest.json            {"streams": [Stream, ...]}
//! <root>/streams/<stream_id>.jsonl  {"t": "...", "v": ...} per line
//! ```
//!
//! A trailing line without a newline is treated as a torn write: readers
//! ignore it and the next append truncates it away.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use pdv_core::series::{slice_range, Accuracy, ReadingSource, ResultSet};
use pdv_core::{Reading, Stream, StreamId, Timestamp};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("stream already registered: {0}")]
    DuplicateStream(StreamId),
    #[error("unknown stream: {0}")]
    UnknownStream(StreamId),
    #[error("out-of-order timestamp for {stream}: {t} is not after {last}")]
    OutOfOrder {
        stream: StreamId,
        t: Timestamp,
        last: Timestamp,
    },
    #[error("invalid range: start is after end")]
    InvalidRange,
    #[error("corrupt log {path}:{line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("corrupt manifest: {0}")]
    Manifest(serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    streams: Vec<Stream>,
}

#[derive(Debug)]
struct Entry {
    stream: Stream,
    last: Option<Timestamp>,
}

/// Handle on a store directory. Single writer; readers re-read the logs.
#[derive(Debug)]
pub struct JsonlStore {
    root: PathBuf,
    streams: BTreeMap<StreamId, Entry>,
}

impl JsonlStore {
    /// Opens the store at `root`, creating an empty one if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<JsonlStore, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("streams"))?;
        let manifest_path = root.join("manifest.json");
        let manifest: Manifest = match fs::read(&manifest_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(StoreError::Manifest)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(e.into()),
        };
        let mut store = JsonlStore {
            root,
            streams: BTreeMap::new(),
        };
        for stream in manifest.streams {
            let last = store.read_all(&stream.id)?.last().map(|r| r.timestamp);
            store.streams.insert(stream.id.clone(), Entry { stream, last });
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn streams(&self) -> BTreeMap<StreamId, Stream> {
        self.streams
            .iter()
            .map(|(id, e)| (id.clone(), e.stream.clone()))
            .collect()
    }

    pub fn log_path(&self, id: &StreamId) -> PathBuf {
        self.root.join("streams").join(format!("{id}.jsonl"))
    }

    pub fn register_stream(&mut self, stream: Stream) -> Result<(), StoreError> {
        if self.streams.contains_key(&stream.id) {
            return Err(StoreError::DuplicateStream(stream.id));
        }
        File::create(self.log_path(&stream.id))?;
        self.streams.insert(
            stream.id.clone(),
            Entry {
                stream,
                last: None,
            },
        );
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        let manifest = Manifest {
            streams: self.streams.values().map(|e| e.stream.clone()).collect(),
        };
        let tmp = self.root.join("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
        fs::rename(tmp, self.root.join("manifest.json"))?;
        Ok(())
    }

    pub fn append(&mut self, id: &StreamId, reading: &Reading) -> Result<(), StoreError> {
        self.append_all(id, std::slice::from_ref(reading))
    }

    /// Appends a batch; the batch is checked for ordering before anything is
    /// written.
    pub fn append_all(&mut self, id: &StreamId, readings: &[Reading]) -> Result<(), StoreError> {
        let path = self.log_path(id);
        let entry = self
            .streams
            .get_mut(id)
            .ok_or_else(|| StoreError::UnknownStream(id.clone()))?;
        let mut last = entry.last;
        for r in readings {
            if let Some(prev) = last {
                if r.timestamp <= prev {
                    return Err(StoreError::OutOfOrder {
                        stream: id.clone(),
                        t: r.timestamp,
                        last: prev,
                    });
                }
            }
            last = Some(r.timestamp);
        }
        truncate_torn_tail(&path)?;
        let mut file = OpenOptions::new().append(true).open(&path)?;
        let mut buf = Vec::new();
        for r in readings {
            serde_json::to_writer(&mut buf, r).expect("readings serialize");
            buf.push(b'\n');
        }
        file.write_all(&buf)?;
        file.sync_data()?;
        entry.last = last;
        Ok(())
    }

    /// Every complete reading in the stream's log, in order.
    pub fn read_all(&self, id: &StreamId) -> Result<Vec<Reading>, StoreError> {
        let path = self.log_path(id);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut reader = BufReader::new(file);
        let mut out = Vec::new();
        let mut line = String::new();
        let mut n = 0;
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            n += 1;
            if !line.ends_with('\n') {
                break;
            }
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            let reading = serde_json::from_str(text).map_err(|source| StoreError::Corrupt {
                path: path.clone(),
                line: n,
                source,
            })?;
            out.push(reading);
        }
        Ok(out)
    }

    /// Readings with `start <= t < end` at native accuracy.
    pub fn range(&self, id: &StreamId, start: Timestamp, end: Timestamp) -> Result<ResultSet, StoreError> {
        let entry = self
            .streams
            .get(id)
            .ok_or_else(|| StoreError::UnknownStream(id.clone()))?;
        if start > end {
            return Err(StoreError::InvalidRange);
        }
        let all = self.read_all(id)?;
        Ok(ResultSet {
            stream_id: id.clone(),
            readings: slice_range(&all, start, end).to_vec(),
            accuracy: Accuracy::native(entry.stream.native_period),
        })
    }
}

fn truncate_torn_tail(path: &Path) -> io::Result<()> {
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    file.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    if last[0] == b'\n' {
        return Ok(());
    }
    let mut bytes = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    file.set_len(keep as u64)
}

impl ReadingSource for JsonlStore {
    type Error = StoreError;

    fn stream(&self, id: &StreamId) -> Option<Stream> {
        self.streams.get(id).map(|e| e.stream.clone())
    }

    fn range(&self, id: &StreamId, start: Timestamp, end: Timestamp) -> Result<ResultSet, StoreError> {
        JsonlStore::range(self, id, start, end)
    }
}
