//! Session state: an immutable dataset snapshot shared by read paths, plus
//! the chat history and tag set, whose mutations are serialized.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use flowquery_bridge::{ChatClient, ChatTurn, ServiceEmbedder, TagMode, TagSet};
use flowquery_core::descriptor::{import_segments, Segment};
use flowquery_core::field::{load_raw, Bounds};
use flowquery_core::matcher::{load_index, segments_fingerprint, HashedEmbedder, MatchIndex, TextEmbedder, TEXT_DIM};
use flowquery_core::tracer::{import_streamlines, Streamline};
use serde::Serialize;
use tokio::sync::Mutex;

use crate::config::{EmbeddingMode, ServerConfig};
use crate::error::{Result, ServerError};

pub const FIELD_STEM: &str = "field";
pub const STREAMLINES_FILE: &str = "streamlines.txt";
pub const SEGMENTS_FILE: &str = "segments.txt";
pub const INDEX_FILE: &str = "index.fqix";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldInfo {
    pub id: String,
    pub dims: [usize; 3],
    pub bounds: Bounds,
}

/// Everything the read-only endpoints serve.
#[derive(Debug, Default)]
pub struct Dataset {
    pub field: Option<FieldInfo>,
    pub streamlines: Vec<Streamline>,
    pub segments: Vec<Segment>,
    by_id: HashMap<u64, usize>,
    pub index: Option<MatchIndex>,
}

impl Dataset {
    /// Checks that segment ids are unique and that the index, when present,
    /// was built from exactly these segments.
    pub fn new(
        field: Option<FieldInfo>,
        streamlines: Vec<Streamline>,
        segments: Vec<Segment>,
        index: Option<MatchIndex>,
    ) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(segments.len());
        for (row, s) in segments.iter().enumerate() {
            if by_id.insert(s.id, row).is_some() {
                return Err(ServerError::Data(format!("duplicate segment id {}", s.id)));
            }
        }
        if let Some(idx) = &index {
            if idx.fingerprint() != segments_fingerprint(&segments) {
                return Err(ServerError::Data(
                    "index fingerprint does not match the loaded segments; rebuild the index".into(),
                ));
            }
        }
        Ok(Self { field, streamlines, segments, by_id, index })
    }

    /// Loads whichever of the standard files exist in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(ServerError::Config(format!("data directory {} does not exist", dir.display())));
        }
        let field = if dir.join(format!("{FIELD_STEM}.meta")).exists() {
            let f = load_raw(dir.join(FIELD_STEM))?;
            Some(FieldInfo { id: FIELD_STEM.into(), dims: f.dims(), bounds: *f.bounds() })
        } else {
            None
        };
        let read = |name: &str| -> Result<Option<String>> {
            let p = dir.join(name);
            Ok(if p.exists() { Some(std::fs::read_to_string(p)?) } else { None })
        };
        let streamlines = read(STREAMLINES_FILE)?.map(|t| import_streamlines(&t)).transpose()?.unwrap_or_default();
        let segments = read(SEGMENTS_FILE)?.map(|t| import_segments(&t)).transpose()?.unwrap_or_default();
        let index_path = dir.join(INDEX_FILE);
        let index = if index_path.exists() { Some(load_index(&index_path)?) } else { None };
        Self::new(field, streamlines, segments, index)
    }

    pub fn segment(&self, id: u64) -> Option<&Segment> {
        self.by_id.get(&id).map(|&row| &self.segments[row])
    }

    pub fn fingerprint(&self) -> Option<String> {
        self.index.as_ref().map(MatchIndex::fingerprint_hex)
    }
}

#[derive(Debug, Default)]
pub struct Session {
    pub history: Vec<ChatTurn>,
    pub tags: TagSet,
}

pub struct AppState {
    pub data: Arc<Dataset>,
    pub embedder: Arc<dyn TextEmbedder>,
    pub chat: Arc<ChatClient>,
    pub tag_mode: TagMode,
    pub session: Mutex<Session>,
    /// Held for the whole relay so chat turns are appended in order.
    pub chat_gate: Mutex<()>,
}

impl AppState {
    pub fn new(data: Dataset, embedder: Arc<dyn TextEmbedder>, chat: ChatClient, tag_mode: TagMode) -> Result<Self> {
        if let Some(idx) = &data.index {
            if embedder.dim() != idx.text_dim() {
                return Err(ServerError::Config(format!(
                    "text embedder width {} does not match the index ({})",
                    embedder.dim(),
                    idx.text_dim()
                )));
            }
        }
        Ok(Self {
            data: Arc::new(data),
            embedder,
            chat: Arc::new(chat),
            tag_mode,
            session: Mutex::new(Session::default()),
            chat_gate: Mutex::new(()),
        })
    }

    pub fn from_config(cfg: &ServerConfig) -> Result<Self> {
        let data = Dataset::load(&cfg.data_dir)?;
        let embedder: Arc<dyn TextEmbedder> = match cfg.embedding.mode {
            EmbeddingMode::Hashed => {
                let dim = data.index.as_ref().map_or(TEXT_DIM, MatchIndex::text_dim);
                Arc::new(HashedEmbedder::new(dim)?)
            }
            EmbeddingMode::Service => Arc::new(ServiceEmbedder::new(&cfg.embedding.service)?),
        };
        let chat = ChatClient::new(cfg.chat.clone())?;
        Self::new(data, embedder, chat, cfg.tag_mode)
    }
}
