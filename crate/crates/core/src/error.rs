use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("polygon {0} has fewer than 4 ring points")]
    DegeneratePolygon(String),

    #[error("polygon {0} has zero area")]
    ZeroArea(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),

    #[error("evacuation zone map is empty")]
    EmptyZoneMap,

    #[error("missing attributes for tracts: {}", .0.join(", "))]
    MissingTracts(Vec<String>),

    #[error("invalid attribute {field} for tract {tract}: {value}")]
    InvalidAttribute { tract: String, field: String, value: f64 },

    #[error("non-positive flow count {count} for {origin} -> {dest}")]
    NonPositiveFlow { origin: String, dest: String, count: f64 },

    #[error("predictor {0} has negative values and cannot be log-transformed")]
    NegativePredictor(String),

    #[error("predictor {name} value {value} is outside the domain of its log transform")]
    LogDomain { name: String, value: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("not enough observations: n={n}, parameters={params}")]
    TooFewObservations { n: usize, params: usize },

    #[error("predictor columns do not match the fitted model: {0}")]
    ColumnMismatch(String),

    #[error("observed values have zero variance; R² is undefined")]
    ZeroVariance,

    #[error("length mismatch: {0} observed vs {1} predicted")]
    LengthMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("malformed GeoJSON: {0}")]
    GeoJson(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
