use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cv::CvReport;
use super::design::{build_design, Design, Transform, TransformSpec, INTERCEPT};
use super::metrics::{metrics_lenient, Metrics};
use super::ols::{fit_ols, predict_counts, Estimate, FittedModel};
use super::vif::{vif_screen, VifScreen};
use crate::error::Result;
use crate::od::DesignRow;

/// Everything the fit stage produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    /// Transforms of every non-constant predictor, before screening.
    pub transforms: TransformSpec,
    pub dropped_constant: Vec<String>,
    pub vif: VifScreen,
    pub model: FittedModel,
    /// Count-scale fit on all rows.
    pub in_sample: Metrics,
}

/// Transform inference, constant-column removal, VIF screen and OLS. Returns
/// the screened design alongside the fit.
pub fn fit_demand_model(rows: &[DesignRow], vif_threshold: f64) -> Result<(Design, ModelFit)> {
    let full = build_design(rows)?;
    let vif = vif_screen(&full, vif_threshold)?;
    let design = full.select(&vif.retained)?;
    let model = fit_ols(&design.x, &design.y, &design.names)?;
    let in_sample = metrics_lenient(&design.observed, &predict_counts(&model, &design.x, &design.names)?)?;
    Ok((
        design,
        ModelFit {
            transforms: full.spec,
            dropped_constant: full.dropped_constant,
            vif,
            model,
            in_sample,
        },
    ))
}

impl ModelFit {
    /// Transforms of the predictors kept in the model.
    pub fn retained_spec(&self) -> TransformSpec {
        TransformSpec(
            self.model
                .predictor_names
                .iter()
                .map(|n| (n.clone(), self.transforms.0[n]))
                .collect(),
        )
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into())
}

fn term_line(out: &mut String, name: &str, transform: &str, e: &Estimate) {
    let _ = writeln!(
        out,
        "{name:<16} {transform:<6} {:>14.6} {:>12.6} {:>10.6} {}",
        e.coef,
        e.std_error,
        e.p_value,
        e.stars()
    );
}

/// Plain-text coefficient table with significance stars and count-scale
/// performance metrics.
pub fn render_report(fit: &ModelFit, cv: Option<&CvReport>) -> String {
    let m = &fit.model;
    let mut out = String::new();
    let _ = writeln!(out, "Direct-demand model, log-linear OLS");
    let _ = writeln!(
        out,
        "observations: {}   predictors: {}   residual df: {}   log-scale R²: {:.6}",
        m.n_obs,
        m.predictor_names.len(),
        m.df_resid,
        m.r_squared_log
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<16} {:<6} {:>14} {:>12} {:>10}", "variable", "form", "coefficient", "std.error", "p-value");
    term_line(&mut out, INTERCEPT, "", &m.intercept);
    for name in &m.predictor_names {
        let form = match fit.transforms.get(name) {
            Some(Transform::Log1p) => "log1p",
            _ => "ln",
        };
        term_line(&mut out, name, form, &m.coefficients[name]);
    }
    let _ = writeln!(out, "significance: * p < 0.05, ** p < 0.01, *** p < 0.001");
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<28} {:>10} {:>10} {:>10}", "performance (count scale)", "MAE", "RMSE", "R²");
    let perf = |out: &mut String, label: &str, x: &Metrics| {
        let _ = writeln!(out, "{label:<28} {:>10.4} {:>10.4} {:>10}", x.mae, x.rmse, fmt_opt(x.r2));
    };
    match cv {
        Some(cv) => {
            perf(&mut out, &format!("in-sample ({}-fold mean)", cv.k), &cv.mean_in_sample);
            perf(&mut out, &format!("out-of-sample ({}-fold mean)", cv.k), &cv.mean_out_of_sample);
            if !cv.r2_undefined_folds.is_empty() {
                let _ = writeln!(out, "R² undefined in folds {:?}", cv.r2_undefined_folds);
            }
        }
        None => perf(&mut out, "in-sample (all rows)", &fit.in_sample),
    }
    if !fit.dropped_constant.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "constant predictors dropped: {}", fit.dropped_constant.join(", "));
    }
    if !fit.vif.removed.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "removed by VIF > {}:", fit.vif.threshold);
        for r in &fit.vif.removed {
            let _ = writeln!(out, "  {:<16} {}", r.name, r.vif.map(|v| format!("{v:.3}")).unwrap_or_else(|| "inf".into()));
        }
    }
    out
}
