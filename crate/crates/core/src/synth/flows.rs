use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::error::{Error, Result};
use crate::geo::great_circle_m;
use crate::model::Transform;
use crate::od::{DesignRow, TractAttributes, DEST_SUFFIX, DISTANCE, ORIGIN_SUFFIX, POPULATION_DENSITY, ROAD_DENSITY};

/// Planted log-linear coefficients on the transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    /// ln φ.
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

impl PlantedModel {
    /// Twenty-one predictors shaped like the published estimates, with
    /// four of the weakest set exactly to zero.
    pub fn reference() -> Self {
        let c = [
            ("EP_CROWD_O", -0.018764),
            ("EP_GROUPQ_O", 0.0),
            ("EP_LIMENG_O", 0.025285),
            ("EP_MOBILE_O", 0.007067),
            ("EP_MUNIT_O", 0.0),
            ("EP_NOVEH_O", -0.029619),
            ("EP_SNGPNT_O", -0.013025),
            ("EP_UNEMP_O", 0.017809),
            ("E_GROUPQ_O", 0.026202),
            ("RDENSITY_O", -0.043353),
            ("EP_CROWD_D", 0.014398),
            ("EP_GROUPQ_D", -0.044422),
            ("EP_LIMENG_D", 0.029280),
            ("EP_MOBILE_D", 0.009983),
            ("EP_MUNIT_D", 0.0),
            ("EP_NOVEH_D", -0.015317),
            ("EP_SNGPNT_D", 0.0),
            ("EP_UNEMP_D", 0.015216),
            ("E_GROUPQ_D", 0.023048),
            ("RDENSITY_D", 0.036927),
            (DISTANCE, -0.24),
        ];
        PlantedModel {
            intercept: 2.5,
            coefficients: c.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn zero_coefficients(&self) -> Vec<&str> {
        self.coefficients.iter().filter(|(_, v)| **v == 0.0).map(|(k, _)| k.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    /// Responses `exp(linear predictor + noise)`.
    pub rows: Vec<DesignRow>,
    /// Same rows with responses `max(1, round(T))`.
    pub rounded: Vec<DesignRow>,
    pub transforms: BTreeMap<String, Transform>,
    /// Noise-free linear predictor per row.
    pub linear_predictor: Vec<f64>,
}

fn raw_value(a: &TractAttributes, base: &str) -> Option<f64> {
    match base {
        POPULATION_DENSITY => Some(a.population_density),
        ROAD_DENSITY => Some(a.road_density),
        _ => a.svi.get(base).copied(),
    }
}

fn predictor_value(o: &TractAttributes, d: &TractAttributes, name: &str) -> Option<f64> {
    if name == DISTANCE {
        return Some(great_circle_m(o.centroid, d.centroid));
    }
    if let Some(base) = name.strip_suffix(ORIGIN_SUFFIX) {
        return raw_value(o, base);
    }
    raw_value(d, name.strip_suffix(DEST_SUFFIX)?)
}

/// Samples `n` distinct ordered tract pairs (intra-tract pairs included) and
/// draws responses from the planted model with log-scale noise `sigma`.
pub fn emit_flows_from_model(s: &Scenario, model: &PlantedModel, n: usize, sigma: f64, seed: u64) -> Result<FlowSample> {
    let ids: Vec<&String> = s.attributes.keys().collect();
    let mut pairs: Vec<(usize, usize)> = (0..ids.len()).flat_map(|i| (0..ids.len()).map(move |j| (i, j))).collect();
    if n > pairs.len() {
        return Err(Error::InvalidConfig(format!("{n} flows requested from {} tract pairs", pairs.len())));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    pairs.truncate(n);

    let mut raw: Vec<BTreeMap<String, f64>> = Vec::with_capacity(n);
    for &(i, j) in &pairs {
        let (o, d) = (&s.attributes[ids[i]], &s.attributes[ids[j]]);
        let mut row = BTreeMap::new();
        for name in model.coefficients.keys() {
            let v = predictor_value(o, d, name).ok_or_else(|| Error::InvalidConfig(format!("unknown planted predictor {name}")))?;
            row.insert(name.clone(), v);
        }
        raw.push(row);
    }
    let transforms: BTreeMap<String, Transform> = model
        .coefficients
        .keys()
        .map(|name| {
            let has_zero = raw.iter().any(|r| r[name] == 0.0);
            (name.clone(), if has_zero { Transform::Log1p } else { Transform::Ln })
        })
        .collect();
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut rows = Vec::with_capacity(n);
    let mut rounded = Vec::with_capacity(n);
    let mut linear_predictor = Vec::with_capacity(n);
    for (&(i, j), predictors) in pairs.iter().zip(raw) {
        let lp = model.intercept
            + model
                .coefficients
                .iter()
                .map(|(name, b)| {
                    let x = predictors[name];
                    b * match transforms[name] {
                        Transform::Ln => x.ln(),
                        Transform::Log1p => (1.0 + x).ln(),
                    }
                })
                .sum::<f64>();
        let eps = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let t = (lp + eps).exp();
        let row = DesignRow {
            origin_tract: ids[i].clone(),
            dest_tract: ids[j].clone(),
            response: t,
            predictors,
        };
        rounded.push(DesignRow { response: t.round().max(1.0), ..row.clone() });
        rows.push(row);
        linear_predictor.push(lp);
    }
    Ok(FlowSample {
        rows,
        rounded,
        transforms,
        linear_predictor,
    })
}
