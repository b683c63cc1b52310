//! Problem files, derivation pipelines and report rendering for `jetvar`.

pub mod pipeline;
pub mod problem;
pub mod report;
pub mod template;

pub use pipeline::{Session, StepError};
pub use problem::{parse_str, print, ParseError, Pipeline, ProblemFile};
pub use report::{render, DerivationReport};
