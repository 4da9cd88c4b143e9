use langdist::analysis::AnalysisError;
use langdist::embedstore::EmbedError;
use langdist::otdd::OtddError;
use langdist::probe::ProbeError;
use langdist::regress::RegressError;
use langdist::treebank::TreebankError;
use langdist::typology::TypologyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {inner}")]
    InFile { path: String, inner: Box<CliError> },
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Otdd(#[from] OtddError),
    #[error(transparent)]
    Typology(#[from] TypologyError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::InFile { inner, .. } => inner.kind(),
            CliError::Treebank(_) => "treebank",
            CliError::Embed(_) => "embeddings",
            CliError::Otdd(_) => "otdd",
            CliError::Typology(_) => "typology",
            CliError::Regress(_) => "regression",
            CliError::Analysis(_) => "analysis",
            CliError::Probe(_) => "probe",
            CliError::Json(_) => "json",
            CliError::Input(_) => "input",
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            CliError::Io { path, .. } | CliError::InFile { path, .. } => Some(path),
            _ => None,
        }
    }
}

pub trait InFile<T> {
    fn in_file(self, path: &str) -> Result<T, CliError>;
}

impl<T, E: Into<CliError>> InFile<T> for Result<T, E> {
    fn in_file(self, path: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::InFile { path: path.to_owned(), inner: Box::new(e.into()) })
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
