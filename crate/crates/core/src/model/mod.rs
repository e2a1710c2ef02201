//! Log-linear direct-demand model: transforms, VIF screening, OLS, metrics
//! and cross-validation.

pub mod cv;
pub mod design;
pub mod metrics;
pub mod ols;
pub mod report;
pub mod vif;

pub use cv::{cross_validate, fold_assignment, CvReport, FoldResult, DEFAULT_FOLDS};
pub use design::{build_design, design_with, infer_transforms, Design, Transform, TransformSpec, INTERCEPT};
pub use metrics::{metrics, metrics_lenient, Metrics};
pub use ols::{fit_ols, predict_counts, significance_stars, Estimate, FittedModel};
pub use report::{fit_demand_model, render_report, ModelFit};
pub use vif::{vif_screen, vifs, VifRemoval, VifScreen, DEFAULT_VIF_THRESHOLD};
