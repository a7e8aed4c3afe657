//! Prompt-to-scene compiler for agricultural field scenes.
//!
//! Stages: [`frontend`] decomposes a prompt into subqueries, [`retrieval`]
//! resolves them to asset paths, [`knowledge`] enriches paths with agronomic
//! entries, [`planner`] lays out fields, [`emitter`] renders an engine script
//! and [`validator`] checks the script against the plan.

pub mod embed_index;
pub mod emitter;
pub mod eval_harness;
pub mod frontend;
pub mod knowledge;
pub mod mutation;
pub mod par;
pub mod pipeline;
pub mod planner;
pub mod providers;
pub mod retrieval;
pub mod taxonomy;
pub mod validator;

use thiserror::Error;

pub use par::Exec;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Taxonomy(#[from] taxonomy::TaxonomyError),
    #[error(transparent)]
    Frontend(#[from] frontend::FrontendError),
    #[error(transparent)]
    Embed(#[from] embed_index::EmbedError),
    #[error(transparent)]
    Index(#[from] embed_index::IndexError),
    #[error(transparent)]
    Retrieval(#[from] retrieval::RetrievalError),
    #[error(transparent)]
    Knowledge(#[from] knowledge::KnowledgeError),
    #[error(transparent)]
    Planner(#[from] planner::PlannerError),
    #[error(transparent)]
    Emitter(#[from] emitter::EmitterError),
    #[error(transparent)]
    Provider(#[from] providers::ProviderError),
    #[error(transparent)]
    Eval(#[from] eval_harness::EvalError),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Pipeline stage the error surfaced in.
    pub fn stage(&self) -> &'static str {
        match self {
            Error::Taxonomy(_) | Error::Config(_) => "config",
            Error::Frontend(_) => "frontend",
            Error::Embed(_) | Error::Index(_) => "index",
            Error::Retrieval(_) => "retrieval",
            Error::Knowledge(_) => "knowledge",
            Error::Planner(_) => "planner",
            Error::Emitter(_) => "emitter",
            Error::Provider(_) => "provider",
            Error::Eval(_) => "eval",
            Error::Validation(_) => "validator",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 validation, 3 configuration, 4 provider, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use embed_index::EmbedError;
        use frontend::FrontendError;
        match self {
            Error::Validation(_) => 2,
            Error::Config(_) | Error::Taxonomy(taxonomy::TaxonomyError::Config(_)) => 3,
            Error::Frontend(FrontendError::Config(_)) => 3,
            Error::Knowledge(knowledge::KnowledgeError::Format(_)) => 3,
            Error::Index(embed_index::IndexError::Format(_)) => 3,
            Error::Provider(_)
            | Error::Embed(EmbedError::Provider(_))
            | Error::Frontend(FrontendError::Provider(_))
            | Error::Emitter(emitter::EmitterError::Provider(_))
            | Error::Retrieval(retrieval::RetrievalError::Embed(EmbedError::Provider(_)))
            | Error::Knowledge(knowledge::KnowledgeError::Embed(EmbedError::Provider(_))) => 4,
            _ => 1,
        }
    }
}

pub mod io {
    use std::fs;
    use std::io::Write;
    use std::path::Path;

    /// Writes via a sibling temp file and rename so readers never see a partial file.
    pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    }
}
