use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no surface")]
    NoSurface,
    #[error("empty point set")]
    EmptyPointSet,
    #[error("empty token set")]
    EmptyTokenSet,
    #[error("too few samples: have {have}, need at least {need}")]
    TooFewSamples { have: usize, need: usize },
    #[error("no primitives")]
    NoPrimitives,
    #[error("velocity undefined at t=0")]
    VelocityAtZero,
    #[error("condition has no target tokens")]
    MissingTarget,
    #[error("mask is not binary")]
    NonBinaryMask,
    #[error("mask shape mismatch: {0}")]
    MaskShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("edit region covers everything")]
    EditCoversEverything,
    #[error("step out of range: t={t}, dt={dt}")]
    StepOutOfRange { t: f64, dt: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoSurface => "no_surface",
            Error::EmptyPointSet => "empty_point_set",
            Error::EmptyTokenSet => "empty_token_set",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::NoPrimitives => "no_primitives",
            Error::VelocityAtZero => "velocity_at_zero",
            Error::MissingTarget => "missing_target",
            Error::NonBinaryMask => "non_binary_mask",
            Error::MaskShape(_) => "mask_shape",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidParam(_) => "invalid_param",
            Error::EditCoversEverything => "edit_covers_everything",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Whether the failure stems from bad input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::NoSurface
                | Error::EmptyPointSet
                | Error::EmptyTokenSet
                | Error::TooFewSamples { .. }
                | Error::VelocityAtZero
                | Error::StepOutOfRange { .. }
        )
    }
}
