use thiserror::Error;

pub type Result<T, E = HeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HeError {
    #[error("{what} = {value} is out of range [0, {bound})")]
    Range { what: &'static str, value: usize, bound: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("layout error: expected {expected}, found {found}")]
    Layout { expected: &'static str, found: String },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HeError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HeError {
    pub fn shape(msg: impl Into<String>) -> Self {
        HeError::Shape(msg.into())
    }

    pub fn capacity(msg: impl Into<String>) -> Self {
        HeError::Capacity(msg.into())
    }

    pub fn at_stage(self, stage: &str) -> Self {
        match self {
            e @ HeError::Stage { .. } => e,
            e => HeError::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    /// True for errors caused by reading or decoding external files.
    pub fn is_io(&self) -> bool {
        match self {
            HeError::Io(_) | HeError::Json(_) => true,
            HeError::Stage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
