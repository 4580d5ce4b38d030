use gshs::estimation::{CellMeasure, JumpRates};
use gshs::fpk::{
    DensitySeries, FluxRecord, FpkProblem, FpkSolution, GridDensity, JumpGenerator, SolveConfig, ThermostatProblem,
};
use gshs::scenarios::{Scenario, SolverKind};
use gshs::state_space::Partition;

use crate::error::{CliError, CliResult};

/// Grid solver selected for a scenario.
pub enum Solver {
    Linear(FpkProblem),
    Thermostat(ThermostatProblem),
}

pub struct Solution {
    pub fpk: FpkSolution,
    pub flux: Option<FluxRecord>,
    pub guard_values: Vec<Vec<f64>>,
}

impl Solution {
    pub fn series(&self) -> &DensitySeries {
        &self.fpk.series
    }
}

impl Solver {
    pub fn new(scenario: &Scenario, partition: &Partition) -> CliResult<Self> {
        let model = &scenario.model;
        Ok(match scenario.solver() {
            Some(SolverKind::Master) => Solver::Linear(FpkProblem::master(JumpGenerator::from_model(model, partition)?)),
            Some(SolverKind::Spontaneous) => Solver::Linear(FpkProblem::spontaneous(model, partition)?),
            Some(SolverKind::Switching) => Solver::Linear(FpkProblem::switching(model, partition)?),
            Some(SolverKind::Thermostat) => Solver::Thermostat(ThermostatProblem::new(model, partition)?),
            None => {
                return Err(CliError::Config(format!(
                    "scenario {} has no grid solver",
                    scenario.name
                )))
            }
        })
    }

    pub fn solve(&self, p0: &GridDensity, cfg: &SolveConfig) -> CliResult<Solution> {
        Ok(match self {
            Solver::Linear(p) => Solution {
                fpk: p.solve(p0, cfg)?,
                flux: None,
                guard_values: Vec::new(),
            },
            Solver::Thermostat(p) => {
                let s = p.solve(p0, cfg)?;
                Solution {
                    fpk: s.solution,
                    flux: Some(s.flux),
                    guard_values: s.guard_values,
                }
            }
        })
    }

    pub fn lstar_mass_rates(&self, p: &GridDensity) -> CellMeasure {
        match self {
            Solver::Linear(s) => s.lstar_mass_rates(p),
            Solver::Thermostat(s) => s.lstar_mass_rates(p),
        }
    }

    pub fn jump_rates(&self, p: &GridDensity) -> JumpRates {
        match self {
            Solver::Linear(s) => s.jump_rates(p),
            Solver::Thermostat(s) => s.jump_rates(p),
        }
    }

    pub fn jump_generator(&self) -> Option<&JumpGenerator> {
        match self {
            Solver::Linear(s) => s.jump_generator(),
            Solver::Thermostat(_) => None,
        }
    }
}
