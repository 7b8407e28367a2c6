//! Chart type recommendation for two-column tables, driven by a chat LLM.
//!
//! The crate is organised as a pipeline:
//!
//! - [`tabular`] loads normalized corpora and infers column kinds.
//! - [`features`] computes the single-column and cross-column statistical
//!   feature catalog and encodes it as a fixed-order vector.
//! - [`retrieval`] clusters a labeled pool into a retrieval set and selects
//!   the nearest demonstrations for a query.
//! - [`llm`] is the chat gateway: request hashing, write-once caching,
//!   retries and a scripted mock.
//! - [`prompt`] renders the prompt templates and parses score responses.
//! - [`pipeline`] runs explanation bootstrapping, recommendation and
//!   evaluation.

pub mod error;
pub mod features;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod tabular;

pub use error::{Error, Result};
pub use tabular::{Cell, Column, ColumnKind, DataType, GeneralType, LabeledCorpusRecord, TabularDataset, VisualizationType};
