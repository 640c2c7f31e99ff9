use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is singular: pivot {index} is {pivot:e}")]
    SingularMatrix { index: usize, pivot: f64 },

    #[error("degenerate spectrum: centered matrix has no variance")]
    DegenerateSpectrum,

    #[error("dataset has no group labels")]
    MissingGroupLabels,

    #[error("group {group} has no members")]
    EmptyGroup { group: usize },

    #[error("dataset has no auxiliary annotations")]
    MissingAnnotations,

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("refusing {what}: n = {n} exceeds the limit of {limit} (override to force)")]
    CostGuard {
        what: &'static str,
        n: usize,
        limit: usize,
    },

    #[error("class {class} has {count} validation examples, need at least {required}")]
    ClassTooSmall {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("trial {index} failed: {source}")]
    Trial { index: usize, source: Box<Error> },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps `self` with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage and trial wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Trial { source, .. } | Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
