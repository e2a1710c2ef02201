use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::od::DesignRow;

/// Name of the intercept term in reports.
pub const INTERCEPT: &str = "INTERCEPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Ln,
    Log1p,
}

impl Transform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Ln => v.ln(),
            Transform::Log1p => v.ln_1p(),
        }
    }

    fn in_domain(self, v: f64) -> bool {
        match self {
            Transform::Ln => v > 0.0,
            Transform::Log1p => v >= 0.0,
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::Ln => "ln",
            Transform::Log1p => "log1p",
        })
    }
}

/// Per-predictor transforms; the response is always `ln`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformSpec(pub BTreeMap<String, Transform>);

impl TransformSpec {
    pub fn names(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<Transform> {
        self.0.get(name).copied()
    }
}

/// Log-linear design: intercept in column 0, then predictors in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    /// ln of the observed response.
    pub y: DVector<f64>,
    /// The response on the count scale.
    pub observed: Vec<f64>,
    pub spec: TransformSpec,
    /// Constant predictors left out of the design.
    pub dropped_constant: Vec<String>,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.names.len()
    }

    /// Predictor column by name (transformed scale).
    pub fn column(&self, name: &str) -> Option<DVector<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.x.column(j + 1).into_owned())
    }

    /// Keeps only the named predictors, preserving name order.
    pub fn select(&self, keep: &[String]) -> Result<Design> {
        let mut cols = vec![0];
        let mut names = Vec::new();
        for (j, n) in self.names.iter().enumerate() {
            if keep.contains(n) {
                cols.push(j + 1);
                names.push(n.clone());
            }
        }
        if let Some(missing) = keep.iter().find(|k| !self.names.contains(k)) {
            return Err(Error::ColumnMismatch(format!("no predictor named {missing}")));
        }
        let spec = TransformSpec(names.iter().map(|n| (n.clone(), self.spec.0[n])).collect());
        Ok(Design {
            x: self.x.select_columns(&cols),
            names,
            y: self.y.clone(),
            observed: self.observed.clone(),
            spec,
            dropped_constant: self.dropped_constant.clone(),
        })
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Design {
        Design {
            names: self.names.clone(),
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            observed: rows.iter().map(|&i| self.observed[i]).collect(),
            spec: self.spec.clone(),
            dropped_constant: self.dropped_constant.clone(),
        }
    }
}

fn check_rows(rows: &[DesignRow]) -> Result<Vec<String>> {
    let first = rows.first().ok_or(Error::TooFewObservations { n: 0, params: 1 })?;
    let names: Vec<String> = first.predictors.keys().cloned().collect();
    for r in rows {
        if r.predictors.len() != names.len() || !names.iter().all(|n| r.predictors.contains_key(n)) {
            return Err(Error::ColumnMismatch(format!("row {}→{} has a different predictor set", r.origin_tract, r.dest_tract)));
        }
        if !(r.response > 0.0) || !r.response.is_finite() {
            return Err(Error::NonPositiveFlow {
                origin: r.origin_tract.clone(),
                dest: r.dest_tract.clone(),
                count: r.response,
            });
        }
        for (n, &v) in &r.predictors {
            if !v.is_finite() {
                return Err(Error::InvalidAttribute {
                    tract: r.origin_tract.clone(),
                    field: n.clone(),
                    value: v,
                });
            }
        }
    }
    Ok(names)
}

/// Picks `ln` for strictly positive predictors and `log1p` for those with a
/// zero; constant predictors are returned separately.
pub fn infer_transforms(rows: &[DesignRow]) -> Result<(TransformSpec, Vec<String>)> {
    let names = check_rows(rows)?;
    let mut spec = BTreeMap::new();
    let mut constant = Vec::new();
    for n in names {
        let first = rows[0].predictors[&n];
        let mut min = f64::INFINITY;
        let mut varies = false;
        for r in rows {
            let v = r.predictors[&n];
            min = min.min(v);
            varies |= v != first;
        }
        if min < 0.0 {
            return Err(Error::NegativePredictor(n));
        }
        if !varies {
            log::warn!("predictor {n} is constant ({first}) and was dropped");
            constant.push(n);
            continue;
        }
        spec.insert(n, if min == 0.0 { Transform::Log1p } else { Transform::Ln });
    }
    Ok((TransformSpec(spec), constant))
}

/// Builds the design from rows using transforms inferred from the rows.
pub fn build_design(rows: &[DesignRow]) -> Result<Design> {
    let (spec, dropped) = infer_transforms(rows)?;
    let mut d = design_with(rows, &spec)?;
    d.dropped_constant = dropped;
    Ok(d)
}

/// Builds the design for the predictors in `spec` with those transforms.
pub fn design_with(rows: &[DesignRow], spec: &TransformSpec) -> Result<Design> {
    check_rows(rows)?;
    let names = spec.names();
    let n = rows.len();
    let mut x = DMatrix::zeros(n, names.len() + 1);
    for (i, r) in rows.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for (j, name) in names.iter().enumerate() {
            let v = *r
                .predictors
                .get(name)
                .ok_or_else(|| Error::ColumnMismatch(format!("rows lack predictor {name}")))?;
            let t = spec.0[name];
            if !t.in_domain(v) {
                return Err(Error::LogDomain { name: name.clone(), value: v });
            }
            x[(i, j + 1)] = t.apply(v);
        }
    }
    let observed: Vec<f64> = rows.iter().map(|r| r.response).collect();
    Ok(Design {
        y: DVector::from_iterator(n, observed.iter().map(|t| t.ln())),
        observed,
        x,
        names,
        spec: spec.clone(),
        dropped_constant: Vec::new(),
    })
}
