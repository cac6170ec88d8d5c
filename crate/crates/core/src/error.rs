use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("rank mismatch: expected {expected}, found {found}")]
    Rank { expected: usize, found: usize },
    #[error("field shapes differ")]
    ShapeMismatch,
    #[error("time grids differ")]
    GridMismatch,
    #[error("empty time grid")]
    EmptyGrid,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid exponent {0}")]
    Exponent(f64),
    #[error("band violation: {0}")]
    Band(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("argument outside the admissible ball: distance {dist} > r0 = {r0}")]
    OutOfBall { dist: f64, r0: f64 },
    #[error("singular direction family: {0}")]
    Singular(String),
    #[error("solver blow-up at t = {t}: norm {norm} exceeded limit {limit}")]
    BlowUp { t: f64, norm: f64, limit: f64 },
    #[error("time step too coarse: step-halving discrepancy {discrepancy} above {tol}")]
    StepTooCoarse { discrepancy: f64, tol: f64 },
    #[error("time grid too coarse: {0}")]
    TimeGridTooCoarse(String),
    #[error("intervals are not nested at level {0}")]
    NotNested(usize),
    #[error("nonpositive quantity {0} in scaling fit")]
    NonPositive(f64),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
