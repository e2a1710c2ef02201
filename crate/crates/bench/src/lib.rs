//! Shared fixtures for the criterion benches.

use evacflow_core::model::{build_design, Design};
use evacflow_core::synth::{emit_flows_from_model, gen_scenario, PlantedModel, Scenario, ScenarioConfig};

/// Scenario with `devices` devices on the default tract grid.
pub fn scenario(devices: usize) -> Scenario {
    gen_scenario(&ScenarioConfig { devices, ..Default::default() }).expect("valid scenario")
}

/// Design matrix of `n` noisy flows drawn from the reference model.
pub fn flow_design(n: usize) -> Design {
    let s = gen_scenario(&ScenarioConfig { tract_cols: 9, tract_rows: 8, devices: 0, ..Default::default() }).expect("valid scenario");
    let sample = emit_flows_from_model(&s, &PlantedModel::reference(), n, 0.1, 7).expect("enough pairs");
    build_design(&sample.rows).expect("valid rows")
}
