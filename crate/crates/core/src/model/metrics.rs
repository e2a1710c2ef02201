use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Count-scale goodness of fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the observed values have zero variance.
    pub r2: Option<f64>,
}

fn compute(observed: &[f64], predicted: &[f64]) -> Result<Metrics> {
    if observed.len() != predicted.len() {
        return Err(Error::LengthMismatch(observed.len(), predicted.len()));
    }
    let n = observed.len();
    if n < 2 {
        return Err(Error::TooFewObservations { n, params: 2 });
    }
    let mean = observed.iter().sum::<f64>() / n as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut tss = 0.0;
    for (t, p) in observed.iter().zip(predicted) {
        abs += (t - p).abs();
        sq += (t - p) * (t - p);
        tss += (t - mean) * (t - mean);
    }
    Ok(Metrics {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        r2: (tss > 0.0).then(|| 1.0 - sq / tss),
    })
}

/// MAE, RMSE and R² of `predicted` against `observed`. Errors when R² is
/// undefined.
pub fn metrics(observed: &[f64], predicted: &[f64]) -> Result<Metrics> {
    let m = compute(observed, predicted)?;
    if m.r2.is_none() {
        return Err(Error::ZeroVariance);
    }
    Ok(m)
}

/// Like [`metrics`] but reports an undefined R² as `None`.
pub fn metrics_lenient(observed: &[f64], predicted: &[f64]) -> Result<Metrics> {
    compute(observed, predicted)
}
