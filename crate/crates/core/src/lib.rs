//! Knowledge-augmented named entity recognition.
//!
//! The pipeline:
//!
//! 1. [`kb`] compiles a WikiData-style dump into a surface→qid index and a
//!    qid→context store, where a context is the `" | "`-joined labels of the
//!    entity's subclass-of, instance-of and occupation values.
//! 2. [`matcher`] finds KB surfaces in a tokenized sentence and keeps the
//!    longest non-overlapping ones.
//! 3. [`augment`] appends each retrieved entity and its context to the
//!    sentence and builds the entity-aware attention mask that lets a context
//!    be seen only from its own entity.
//! 4. [`encoder`] is a small masked transformer tagger used to exercise the
//!    mask end to end; [`ensemble`] votes over k-fold models; [`eval`] scores
//!    entity-level micro/macro F1.
//!
//! See the `examples/` directory for one runnable program per stage.

pub mod augment;
pub mod cli;
pub mod conll;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod kb;
pub mod matcher;
pub mod normalize;
pub mod synthetic;

pub use error::{Error, Result};
