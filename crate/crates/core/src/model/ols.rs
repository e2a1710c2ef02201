use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Relative size below which a diagonal entry of R marks a dependent column.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub coef: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

impl Estimate {
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p_value)
    }
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// ln φ.
    pub intercept: Estimate,
    pub coefficients: BTreeMap<String, Estimate>,
    /// Column order of the design the model was fitted on.
    pub predictor_names: Vec<String>,
    pub n_obs: usize,
    pub df_resid: usize,
    pub rss: f64,
    pub sigma2: f64,
    /// R² of the log-scale fit.
    pub r_squared_log: f64,
}

impl FittedModel {
    /// Intercept followed by coefficients in `predictor_names` order.
    pub fn beta(&self) -> DVector<f64> {
        let mut b = vec![self.intercept.coef];
        b.extend(self.predictor_names.iter().map(|n| self.coefficients[n].coef));
        DVector::from_vec(b)
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>, names: &[String]) -> Result<DVector<f64>> {
        if names != self.predictor_names.as_slice() || x.ncols() != names.len() + 1 {
            return Err(Error::ColumnMismatch(format!(
                "model has [{}], design has [{}]",
                self.predictor_names.join(", "),
                names.join(", ")
            )));
        }
        Ok(x * self.beta())
    }
}

/// Least squares via Householder QR. `x` carries the intercept in column 0
/// and `names` labels the remaining columns.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<FittedModel> {
    let (n, k) = x.shape();
    if k != names.len() + 1 {
        return Err(Error::ColumnMismatch(format!("{} columns for {} names plus intercept", k, names.len())));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch(y.len(), n));
    }
    if n <= k {
        return Err(Error::TooFewObservations { n, params: k });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm {
            return Err(Error::RankDeficient);
        }
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or(Error::RankDeficient)?;

    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let df = n - k;
    let sigma2 = rss / df as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::RankDeficient)?;
    let t_dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    let estimate = |j: usize| {
        let var = r_inv.row(j).norm_squared() * sigma2;
        let se = var.sqrt();
        let t = beta[j] / se;
        let p = if se > 0.0 {
            2.0 * t_dist.sf(t.abs())
        } else if beta[j] == 0.0 {
            1.0
        } else {
            0.0
        };
        Estimate { coef: beta[j], std_error: se, t_value: t, p_value: p }
    };
    let y_mean = y.mean();
    let tss = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>();
    Ok(FittedModel {
        intercept: estimate(0),
        coefficients: names.iter().enumerate().map(|(j, n)| (n.clone(), estimate(j + 1))).collect(),
        predictor_names: names.to_vec(),
        n_obs: n,
        df_resid: df,
        rss,
        sigma2,
        r_squared_log: if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN },
    })
}

/// Back-transformed predictions `exp(Xβ)`.
pub fn predict_counts(model: &FittedModel, x: &DMatrix<f64>, names: &[String]) -> Result<Vec<f64>> {
    Ok(model.linear_predictor(x, names)?.iter().map(|v| v.exp()).collect())
}
