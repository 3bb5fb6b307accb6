use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<DataError>,
    },

    #[error(transparent)]
    Flow(#[from] flow_extraction::FlowError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub fn for_sample(sample_id: &str, source: DataError) -> Self {
        DataError::Sample {
            sample_id: sample_id.to_string(),
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;
