//! Browser bindings. Every export takes and returns JSON text so the page can
//! stay plain JavaScript; the `*_report` functions hold the logic and are
//! usable natively.

use nlcap::bell::{
    cglmp3_functional, chsh_functional, extract_bell, max_violation, BellFunctional,
};
use nlcap::quantum::{born_box as born, GammaState, MeasurementSetup};
use nlcap::solver::{best_effort, nonlocal_capacity, SolverConfig};
use nlcap::{Error, NSBox};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct CapacityReport {
    pub capacity: f64,
    pub lower_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub input_dist: Vec<f64>,
    /// Bell functional read off the dual witness.
    pub bell_coeffs: Vec<f64>,
    pub bell_local_bound: f64,
}

#[derive(Debug, Serialize)]
pub struct ViolationReport {
    pub value: f64,
    pub local_bound: f64,
    pub delta_b: f64,
    /// `B/2 - 1` floored at 0.
    pub cmin_bell: f64,
}

fn preset(name: &str) -> Result<MeasurementSetup, Error> {
    match name {
        "tsirelson" => Ok(MeasurementSetup::tsirelson()),
        "cglmp3" => Ok(MeasurementSetup::cglmp3()),
        other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
    }
}

fn builtin(name: &str) -> Result<BellFunctional, Error> {
    match name {
        "chsh" => Ok(chsh_functional()),
        "cglmp3" => Ok(cglmp3_functional()),
        other => Err(Error::InvalidConfig(format!(
            "unknown functional {other:?}"
        ))),
    }
}

/// Born box of `|00> + g1 |11> + g2 |22>` under a preset measurement.
pub fn born_box_report(gamma1: f64, gamma2: f64, preset_name: &str) -> Result<NSBox, Error> {
    let setup = preset(preset_name)?;
    let rho = GammaState::new(gamma1, gamma2)?.density_in(setup.shape().r)?;
    born(&rho, &setup)
}

/// Capacity with its certificate; an exhausted iteration budget still reports the best iterate.
pub fn capacity_report(
    nsbox: &NSBox,
    gap_tol: f64,
    max_iters: usize,
) -> Result<CapacityReport, Error> {
    let cfg = SolverConfig {
        gap_tol,
        max_outer_iters: max_iters,
        ..Default::default()
    };
    let res = best_effort(nonlocal_capacity(nsbox, &cfg))?;
    let bell = extract_bell(&res.witness)?;
    Ok(CapacityReport {
        capacity: res.capacity,
        lower_bound: res.lower_bound,
        gap: res.gap,
        iterations: res.iterations,
        converged: res.converged,
        input_dist: res.witness.input_dist.as_slice().to_vec(),
        bell_coeffs: bell.coeffs().to_vec(),
        bell_local_bound: bell.local_bound(),
    })
}

/// Best violation over all relabelings of a built-in functional.
pub fn violation_report(nsbox: &NSBox, functional: &str) -> Result<ViolationReport, Error> {
    let orbit = builtin(functional)?.relabel_orbit();
    let (_, v) = max_violation(nsbox, &orbit)?;
    Ok(ViolationReport {
        value: v.value,
        local_bound: v.local_bound,
        delta_b: v.delta_b,
        cmin_bell: (0.5 * v.value - 1.0).max(0.0),
    })
}

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(value: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(js)
}

fn parse_box(text: &str) -> Result<NSBox, JsError> {
    serde_json::from_str(text).map_err(js)
}

#[wasm_bindgen]
pub fn born_box(gamma1: f64, gamma2: f64, preset: &str) -> Result<String, JsError> {
    to_json(&born_box_report(gamma1, gamma2, preset).map_err(js)?)
}

#[wasm_bindgen]
pub fn capacity(box_json: &str, gap_tol: f64, max_iters: usize) -> Result<String, JsError> {
    to_json(&capacity_report(&parse_box(box_json)?, gap_tol, max_iters).map_err(js)?)
}

#[wasm_bindgen]
pub fn violation(box_json: &str, functional: &str) -> Result<String, JsError> {
    to_json(&violation_report(&parse_box(box_json)?, functional).map_err(js)?)
}
