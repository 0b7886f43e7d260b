//! Optional language-model integration around the flow query engine: a chat
//! relay, concept-tag extraction with an offline lexicon, multi-view segment
//! renders, instruction-data generation, and a remote text-embedding client.

pub mod chat;
pub mod embed;
pub mod error;
pub mod instruct;
pub mod render;
pub mod tags;

pub use chat::{trim_history, ChatClient, ChatConfig, ChatTurn, Role};
pub use embed::{EmbeddingServiceConfig, ServiceEmbedder};
pub use error::{BridgeError, Result};
pub use tags::{extract_lexicon, extract_tags, TagConcept, TagMode, TagSet, LEXICON};
pub use render::{render_points, render_views, save_views, View};
pub use instruct::{
    default_templates, gen_instruction_data, read_jsonl, sample_review, write_jsonl, GenOptions, GenReport,
    InstructionSample, Template, TemplateKind,
};
