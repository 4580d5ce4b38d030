//! Browser bindings: run a catalog scenario as an ensemble and on the grid
//! solver, and return per-cell densities for plotting.

use gshs::estimation::{estimate_law_all, LawSeries};
use gshs::fpk::{FpkProblem, JumpGenerator, SolveConfig, ThermostatProblem};
use gshs::scenarios::{build, Overrides, ParamValue, Scenario, SolverKind, CATALOG};
use gshs::simulator::{simulate_ensemble, EnsembleConfig, PathConfig};
use gshs::state_space::Partition;
use wasm_bindgen::prelude::*;

/// Per-cell densities of one scenario at its final time.
#[wasm_bindgen]
#[derive(Debug)]
pub struct Densities {
    centers: Vec<f64>,
    modes: Vec<u32>,
    values: Vec<f64>,
    t: f64,
}

#[wasm_bindgen]
impl Densities {
    /// Cell centres (the cell index for a discrete mode).
    pub fn centers(&self) -> Vec<f64> {
        self.centers.clone()
    }

    pub fn modes(&self) -> Vec<u32> {
        self.modes.clone()
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn time(&self) -> f64 {
        self.t
    }
}

#[wasm_bindgen]
pub fn scenarios() -> Vec<String> {
    CATALOG.iter().map(|s| s.to_string()).collect()
}

/// Whether the scenario has a grid solver.
#[wasm_bindgen]
pub fn has_solver(name: &str) -> Result<bool, JsError> {
    Ok(scenario(name, 1, None).map_err(|e| JsError::new(&e))?.solver().is_some())
}

/// Histogram of `n_paths` simulated paths at `t_end`.
#[wasm_bindgen]
pub fn simulate(name: &str, n_paths: u32, seed: u64, t_end: Option<f64>) -> Result<Densities, JsError> {
    ensemble_density(name, n_paths as usize, seed, t_end).map_err(|e| JsError::new(&e))
}

/// Grid-solver density at `t_end`.
#[wasm_bindgen]
pub fn solve(name: &str, t_end: Option<f64>) -> Result<Densities, JsError> {
    solver_density(name, t_end).map_err(|e| JsError::new(&e))
}

/// `sum |a - b| h` over cells of two densities on the same grid.
#[wasm_bindgen]
pub fn l1_distance(name: &str, a: &Densities, b: &Densities) -> Result<f64, JsError> {
    let s = scenario(name, 1, None).map_err(|e| JsError::new(&e))?;
    let part = s.partition().map_err(|e| JsError::new(&e.to_string()))?;
    Ok(distance(&part, &a.values, &b.values))
}

fn distance(part: &Partition, a: &[f64], b: &[f64]) -> f64 {
    part.volumes()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(v, (x, y))| v * (x - y).abs())
        .sum()
}

fn scenario(name: &str, n_paths: usize, t_end: Option<f64>) -> Result<Scenario, String> {
    let mut o = Overrides::new();
    o.insert("run.n_paths".into(), ParamValue::Number(n_paths as f64));
    if let Some(t) = t_end {
        o.insert("run.t_end".into(), ParamValue::Number(t));
    }
    build(name, &o).map_err(|e| e.to_string())
}

fn densities(part: &Partition, values: Vec<f64>, t: f64) -> Densities {
    let centers = (0..part.n_cells())
        .map(|c| part.center(c).z.first().copied().unwrap_or(c as f64))
        .collect();
    let modes = (0..part.n_cells()).map(|c| part.cell_mode(c) as u32).collect();
    Densities { centers, modes, values, t }
}

fn ensemble_density(name: &str, n_paths: usize, seed: u64, t_end: Option<f64>) -> Result<Densities, String> {
    let s = scenario(name, n_paths, t_end)?;
    let part = s.partition().map_err(|e| e.to_string())?;
    let d = s.defaults;
    let cfg = EnsembleConfig {
        n_paths,
        master_seed: seed,
        path: PathConfig::new(d.t_end, d.dt).with_stride((d.bin_width / d.dt).round() as usize),
    };
    let summary = simulate_ensemble(&s.model, &s.initial, &cfg).map_err(|e| e.to_string())?;
    let law = estimate_law_all(&summary, &part).map_err(|e| e.to_string())?;
    let k = law.times().len() - 1;
    Ok(densities(&part, law.density(k), law.times()[k]))
}

fn solver_density(name: &str, t_end: Option<f64>) -> Result<Densities, String> {
    let s = scenario(name, 1, t_end)?;
    let part = s.partition().map_err(|e| e.to_string())?;
    let d = s.defaults;
    let p0 = s.initial_density(&part).map_err(|e| e.to_string())?;
    let cfg = SolveConfig::new(d.t_end, d.dt, d.bin_width);
    let series = match s.solver() {
        Some(SolverKind::Master) => JumpGenerator::from_model(&s.model, &part)
            .and_then(|g| FpkProblem::master(g).solve(&p0, &cfg))
            .map(|r| r.series),
        Some(SolverKind::Spontaneous) => {
            FpkProblem::spontaneous(&s.model, &part).and_then(|p| p.solve(&p0, &cfg)).map(|r| r.series)
        }
        Some(SolverKind::Switching) => {
            FpkProblem::switching(&s.model, &part).and_then(|p| p.solve(&p0, &cfg)).map(|r| r.series)
        }
        Some(SolverKind::Thermostat) => ThermostatProblem::new(&s.model, &part)
            .and_then(|p| p.solve(&p0, &cfg))
            .map(|r| r.solution.series),
        None => return Err(format!("scenario {name} has no grid solver")),
    }
    .map_err(|e| e.to_string())?;
    let last = series.last();
    Ok(densities(&part, last.values, last.time))
}
