use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid graph state: {0}")]
    State(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("infeasible dataset spec: {0}")]
    Spec(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate group: attribute `{attribute}` class {class} is empty")]
    DegenerateGroup { attribute: String, class: u8 },
    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("undefined rate: {0}")]
    UndefinedRate(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("protected attribute `{0}` is not reachable through the training view")]
    Firewall(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid inputs or configuration rather than
    /// by a numeric failure at run time.
    pub fn is_config(&self) -> bool {
        !matches!(self, Error::Numeric(_) | Error::Io(_))
    }
}
