//! Rooms and their durable, append-only logs.
//!
//! On-disk layout under the data directory:
//!
//! ```text
//! rooms/<room_id>/room.json           {"room_id":..,"agent_author":..}
//! rooms/<room_id>/messages.ndjson     one canonical message record per line
//! rooms/<room_id>/participants.ndjson one {"author":..,"display_name":..} per line
//! ```
//!
//! Every append is written as a single `record\n` and (by default) fsynced
//! before it is acknowledged. On recovery a trailing partial record is a torn
//! write and is discarded; anything unreadable before the tail is corruption.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use facilitator_core::{AuthorId, Clock, Message, Origin, Transcript};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

const ROOMS_DIR: &str = "rooms";
const ROOM_META: &str = "room.json";
const MESSAGES_LOG: &str = "messages.ndjson";
const PARTICIPANTS_LOG: &str = "participants.ndjson";
const MAX_ROOM_ID_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no such room `{0}`")]
    NoSuchRoom(String),
    #[error("room `{0}` already exists")]
    RoomExists(String),
    #[error("invalid room id `{0}`: use 1-128 of A-Z a-z 0-9 - _ . ~")]
    InvalidRoomId(String),
    #[error("`{author}` has not joined room `{room}`")]
    NotJoined { room: String, author: String },
    #[error("message body is empty")]
    EmptyBody,
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("corrupt log {path}, line {line}: {reason}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("data directory {path} is not writable: {source}")]
    DataDirUnwritable { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// fsync each record before acknowledging it.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { fsync: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub author: AuthorId,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomInfo {
    pub room_id: String,
    pub agent_author: Option<AuthorId>,
}

/// A message submitted by a client; seq and timestamp are assigned here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewMessage {
    pub author: AuthorId,
    pub body: String,
    #[serde(default = "human")]
    pub origin: Origin,
    #[serde(default)]
    pub feature_tag: Option<String>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

fn human() -> Origin {
    Origin::Human
}

/// Whether a post appended a new message or matched an earlier agent post
/// with the same idempotency key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Posted {
    Appended,
    Duplicate,
}

pub fn valid_room_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_ROOM_ID_LEN
        && id != "."
        && id != ".."
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~'))
        && !id.starts_with('.')
}

struct AppendLog {
    file: File,
    len: u64,
    fsync: bool,
}

impl AppendLog {
    fn open(path: &Path, len: u64, fsync: bool) -> io::Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file, len, fsync })
    }

    /// Writes one record line; on failure the file is cut back so a later
    /// append cannot leave garbage in the middle of the log.
    fn append<T: Serialize>(&mut self, record: &T) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        let result = self.file.write_all(&line).and_then(|()| {
            if self.fsync {
                self.file.sync_data()
            } else {
                Ok(())
            }
        });
        match result {
            Ok(()) => {
                self.len += line.len() as u64;
                Ok(())
            }
            Err(e) => {
                let _ = self.file.set_len(self.len);
                Err(e)
            }
        }
    }
}

struct Writer {
    messages: AppendLog,
    participants: AppendLog,
    keys: HashMap<String, u64>,
}

pub struct Room {
    info: RoomInfo,
    writer: Mutex<Writer>,
    messages: RwLock<Vec<Message>>,
    participants: RwLock<BTreeMap<AuthorId, String>>,
    length: watch::Sender<usize>,
}

impl Room {
    pub fn info(&self) -> &RoomInfo {
        &self.info
    }

    /// Notified with the new message count after every append.
    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.length.subscribe()
    }

    pub fn messages_after(&self, after_seq: i64) -> Vec<Message> {
        let messages = self.messages.read().expect("room lock poisoned");
        let from = usize::try_from(after_seq.saturating_add(1)).unwrap_or(0);
        messages
            .get(from..)
            .map(<[Message]>::to_vec)
            .unwrap_or_default()
    }

    pub fn participants(&self) -> Vec<Participant> {
        self.participants
            .read()
            .expect("room lock poisoned")
            .iter()
            .map(|(author, name)| Participant {
                author: author.clone(),
                display_name: name.clone(),
            })
            .collect()
    }

    pub fn transcript(&self) -> Transcript {
        let messages = self.messages.read().expect("room lock poisoned").clone();
        Transcript::from_messages(self.info.agent_author.clone(), messages)
            .expect("room log upholds transcript invariants")
    }

    fn is_joined(&self, author: &AuthorId) -> bool {
        self.info.agent_author.as_ref() == Some(author)
            || self
                .participants
                .read()
                .expect("room lock poisoned")
                .contains_key(author)
    }
}

/// All rooms of one service instance.
pub struct ChatStore {
    rooms_dir: PathBuf,
    rooms: RwLock<BTreeMap<String, Arc<Room>>>,
    clock: Arc<dyn Clock>,
    options: StoreOptions,
}

impl ChatStore {
    /// Opens (creating if needed) a data directory and rebuilds every room
    /// from its logs.
    pub fn recover(
        data_dir: impl AsRef<Path>,
        clock: Arc<dyn Clock>,
        options: StoreOptions,
    ) -> Result<Self, StoreError> {
        let rooms_dir = data_dir.as_ref().join(ROOMS_DIR);
        let unwritable = |source| StoreError::DataDirUnwritable {
            path: data_dir.as_ref().to_path_buf(),
            source,
        };
        fs::create_dir_all(&rooms_dir).map_err(unwritable)?;
        let probe = rooms_dir.join(".write-probe");
        File::create(&probe).map_err(unwritable)?;
        fs::remove_file(&probe).map_err(unwritable)?;

        let mut rooms = BTreeMap::new();
        let mut entries: Vec<_> = fs::read_dir(&rooms_dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                // Leftover staging directory from an interrupted create.
                if entry.file_type()?.is_dir() {
                    fs::remove_dir_all(entry.path())?;
                }
                continue;
            }
            let room = load_room(&entry.path(), options)?;
            rooms.insert(name, Arc::new(room));
        }
        tracing::info!(rooms = rooms.len(), dir = %rooms_dir.display(), "recovered chat store");
        Ok(Self {
            rooms_dir,
            rooms: RwLock::new(rooms),
            clock,
            options,
        })
    }

    pub fn list_rooms(&self) -> Vec<String> {
        self.rooms
            .read()
            .expect("store lock poisoned")
            .keys()
            .cloned()
            .collect()
    }

    pub fn room(&self, room_id: &str) -> Result<Arc<Room>, StoreError> {
        self.rooms
            .read()
            .expect("store lock poisoned")
            .get(room_id)
            .cloned()
            .ok_or_else(|| StoreError::NoSuchRoom(room_id.to_string()))
    }

    pub fn create_room(
        &self,
        room_id: &str,
        agent_author: Option<AuthorId>,
    ) -> Result<RoomInfo, StoreError> {
        if !valid_room_id(room_id) {
            return Err(StoreError::InvalidRoomId(room_id.to_string()));
        }
        let mut rooms = self.rooms.write().expect("store lock poisoned");
        if rooms.contains_key(room_id) {
            return Err(StoreError::RoomExists(room_id.to_string()));
        }
        let info = RoomInfo {
            room_id: room_id.to_string(),
            agent_author,
        };
        // Stage the directory, then rename it into place so a crash never
        // leaves a half-created room behind.
        let staging = self.rooms_dir.join(format!(".create-{room_id}"));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        let mut meta = File::create(staging.join(ROOM_META))?;
        meta.write_all(&serde_json::to_vec(&info).map_err(io::Error::other)?)?;
        meta.sync_all()?;
        File::create(staging.join(MESSAGES_LOG))?.sync_all()?;
        File::create(staging.join(PARTICIPANTS_LOG))?.sync_all()?;
        let target = self.rooms_dir.join(room_id);
        fs::rename(&staging, &target).map_err(|e| {
            let _ = fs::remove_dir_all(&staging);
            if target.exists() {
                StoreError::RoomExists(room_id.to_string())
            } else {
                StoreError::Io(e)
            }
        })?;
        if self.options.fsync {
            File::open(&self.rooms_dir)?.sync_all()?;
        }
        let room = load_room(&target, self.options)?;
        rooms.insert(room_id.to_string(), Arc::new(room));
        Ok(info)
    }

    pub fn join(
        &self,
        room_id: &str,
        author: AuthorId,
        display_name: &str,
    ) -> Result<Participant, StoreError> {
        let room = self.room(room_id)?;
        if display_name.trim().is_empty() {
            return Err(StoreError::Invalid("display_name is empty".into()));
        }
        let participant = Participant {
            author,
            display_name: display_name.to_string(),
        };
        let mut writer = room.writer.lock().expect("room lock poisoned");
        let current = room
            .participants
            .read()
            .expect("room lock poisoned")
            .get(&participant.author)
            .cloned();
        if current.as_deref() != Some(display_name) {
            writer.participants.append(&participant)?;
            room.participants
                .write()
                .expect("room lock poisoned")
                .insert(participant.author.clone(), participant.display_name.clone());
        }
        Ok(participant)
    }

    /// Appends a message with the next seq and a server timestamp. An agent
    /// post whose idempotency key is already in the room returns the earlier
    /// message instead.
    pub fn post_message(
        &self,
        room_id: &str,
        message: NewMessage,
    ) -> Result<(Message, Posted), StoreError> {
        let room = self.room(room_id)?;
        if message.body.trim().is_empty() {
            return Err(StoreError::EmptyBody);
        }
        if message.origin == Origin::Human && !room.is_joined(&message.author) {
            return Err(StoreError::NotJoined {
                room: room_id.to_string(),
                author: message.author.to_string(),
            });
        }
        let draft = facilitator_core::Draft {
            author: message.author,
            body: message.body,
            origin: message.origin,
            feature_tag: message.feature_tag,
            idempotency_key: message.idempotency_key,
        };
        facilitator_core::transcript::validate_draft(&draft, room.info.agent_author.as_ref())
            .map_err(|e| StoreError::Invalid(e.to_string()))?;

        let mut writer = room.writer.lock().expect("room lock poisoned");
        if let Some(key) = &draft.idempotency_key {
            if let Some(&seq) = writer.keys.get(key) {
                let existing =
                    room.messages.read().expect("room lock poisoned")[seq as usize].clone();
                return Ok((existing, Posted::Duplicate));
            }
        }
        let (seq, tail_ts) = {
            let messages = room.messages.read().expect("room lock poisoned");
            (messages.len() as u64, messages.last().map(|m| m.ts_ms))
        };
        let now = self.clock.now_ms();
        let record = Message {
            seq,
            author: draft.author,
            body: draft.body,
            ts_ms: tail_ts.map_or(now, |tail| now.max(tail)),
            origin: draft.origin,
            feature_tag: draft.feature_tag,
            idempotency_key: draft.idempotency_key,
        };
        writer.messages.append(&record)?;
        if let Some(key) = &record.idempotency_key {
            writer.keys.insert(key.clone(), seq);
        }
        let len = {
            let mut messages = room.messages.write().expect("room lock poisoned");
            messages.push(record.clone());
            messages.len()
        };
        room.length.send_replace(len);
        Ok((record, Posted::Appended))
    }

    pub fn get_messages(&self, room_id: &str, after_seq: i64) -> Result<Vec<Message>, StoreError> {
        Ok(self.room(room_id)?.messages_after(after_seq))
    }

    pub fn participants(&self, room_id: &str) -> Result<Vec<Participant>, StoreError> {
        Ok(self.room(room_id)?.participants())
    }
}

struct Loaded<T> {
    records: Vec<T>,
    /// Byte length of the intact prefix.
    keep: u64,
    /// The last record parsed but its newline was lost.
    missing_newline: bool,
}

fn read_log<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, StoreError> {
    let bytes = fs::read(path)?;
    let mut records = Vec::new();
    let mut pos = 0;
    let mut line = 0;
    while pos < bytes.len() {
        line += 1;
        match bytes[pos..].iter().position(|&b| b == b'\n') {
            Some(offset) => {
                let record = serde_json::from_slice(&bytes[pos..pos + offset]).map_err(|e| {
                    StoreError::CorruptLog {
                        path: path.to_path_buf(),
                        line,
                        reason: e.to_string(),
                    }
                })?;
                records.push(record);
                pos += offset + 1;
            }
            None => {
                return Ok(match serde_json::from_slice(&bytes[pos..]) {
                    Ok(record) => {
                        records.push(record);
                        Loaded {
                            records,
                            keep: bytes.len() as u64,
                            missing_newline: true,
                        }
                    }
                    Err(_) => {
                        tracing::warn!(path = %path.display(), line, "discarding torn trailing record");
                        Loaded {
                            records,
                            keep: pos as u64,
                            missing_newline: false,
                        }
                    }
                });
            }
        }
    }
    Ok(Loaded {
        records,
        keep: bytes.len() as u64,
        missing_newline: false,
    })
}

/// Cuts a torn tail off (or restores a lost final newline) so the file is
/// exactly the intact records.
fn repair(path: &Path, loaded_keep: u64, missing_newline: bool) -> io::Result<u64> {
    let file = OpenOptions::new().write(true).open(path)?;
    let mut len = file.metadata()?.len();
    if len != loaded_keep {
        file.set_len(loaded_keep)?;
        len = loaded_keep;
    }
    if missing_newline {
        let mut f = OpenOptions::new().append(true).open(path)?;
        f.write_all(b"\n")?;
        len += 1;
    }
    file.sync_all()?;
    Ok(len)
}

fn load_room(dir: &Path, options: StoreOptions) -> Result<Room, StoreError> {
    let meta_path = dir.join(ROOM_META);
    let corrupt = |path: &Path, reason: String| StoreError::CorruptLog {
        path: path.to_path_buf(),
        line: 1,
        reason,
    };
    let info: RoomInfo = serde_json::from_slice(
        &fs::read(&meta_path).map_err(|e| corrupt(&meta_path, e.to_string()))?,
    )
    .map_err(|e| corrupt(&meta_path, e.to_string()))?;

    let messages_path = dir.join(MESSAGES_LOG);
    let loaded: Loaded<Message> = read_log(&messages_path)?;
    let transcript = Transcript::from_messages(info.agent_author.clone(), loaded.records)
        .map_err(|e| corrupt(&messages_path, e.to_string()))?;
    let messages_len = repair(&messages_path, loaded.keep, loaded.missing_newline)?;

    let participants_path = dir.join(PARTICIPANTS_LOG);
    let joined: Loaded<Participant> = read_log(&participants_path)?;
    let participants_len = repair(&participants_path, joined.keep, joined.missing_newline)?;
    let participants: BTreeMap<AuthorId, String> = joined
        .records
        .into_iter()
        .map(|p| (p.author, p.display_name))
        .collect();

    let messages = transcript.messages().to_vec();
    let keys = messages
        .iter()
        .filter_map(|m| m.idempotency_key.clone().map(|k| (k, m.seq)))
        .collect();
    let (length, _) = watch::channel(messages.len());
    Ok(Room {
        info,
        writer: Mutex::new(Writer {
            messages: AppendLog::open(&messages_path, messages_len, options.fsync)?,
            participants: AppendLog::open(&participants_path, participants_len, options.fsync)?,
            keys,
        }),
        messages: RwLock::new(messages),
        participants: RwLock::new(participants),
        length,
    })
}
