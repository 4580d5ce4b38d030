//! Grid solvers for the generalized FPK equation
//! `mu'_t = L* mu_t + r_t (K - I)`.
//!
//! The continuous part is a conservative finite-volume operator (see
//! [`operator`]); the jump part a linear map on cell masses (see
//! [`jumps`]). Time stepping is explicit: SSP-RK2 for `L*`, classical RK4
//! for jumps, combined by Strang splitting. Both integrators are
//! positivity preserving below the stability bound, which is checked before
//! any step is taken.

pub mod jumps;
pub mod operator;
pub mod sparse;
pub mod thermostat;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{CellMeasure, JumpRates, LawSeries};
use crate::model::{GshsModel, ResetKernel};
use crate::state_space::Partition;

pub use jumps::JumpGenerator;
pub use operator::{apply_lstar, assemble_lstar, probability_current, CurrentField, FaceCurrent};
pub use sparse::CsrMatrix;
pub use thermostat::{solve_forced_thermostat, FluxRecord, ThermostatProblem, ThermostatSolution};

/// Undershoot below which a density value aborts the solve.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// Density with respect to the volume measure, one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub partition: Partition,
    pub values: Vec<f64>,
    pub time: f64,
}

impl GridDensity {
    pub fn new(partition: Partition, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != partition.n_cells() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} cells",
                values.len(),
                partition.n_cells()
            )));
        }
        Ok(Self {
            partition,
            values,
            time,
        })
    }

    pub fn from_masses(partition: Partition, masses: &[f64], time: f64) -> Result<Self> {
        let values = masses
            .iter()
            .enumerate()
            .map(|(c, m)| m / partition.cell_volume(c))
            .collect();
        Self::new(partition, values, time)
    }

    pub fn masses(&self) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .map(|(c, p)| p * self.partition.cell_volume(c))
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    /// Mass per mode.
    pub fn mode_masses(&self) -> Vec<f64> {
        let m = self.masses();
        (0..self.partition.n_modes())
            .map(|q| m[self.partition.mode_range(q)].iter().sum())
            .collect()
    }
}

/// Densities at the snapshot times of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySeries {
    pub partition: Partition,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl DensitySeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn snapshot(&self, k: usize) -> GridDensity {
        GridDensity {
            partition: self.partition.clone(),
            values: self.values[k].clone(),
            time: self.times[k],
        }
    }

    pub fn last(&self) -> GridDensity {
        self.snapshot(self.len() - 1)
    }

    pub fn total_mass(&self, k: usize) -> f64 {
        self.masses(k).iter().sum()
    }
}

impl LawSeries for DensitySeries {
    fn partition(&self) -> &Partition {
        &self.partition
    }

    fn times(&self) -> &[f64] {
        &self.times
    }

    fn masses(&self, k: usize) -> Vec<f64> {
        self.values[k]
            .iter()
            .enumerate()
            .map(|(c, p)| p * self.partition.cell_volume(c))
            .collect()
    }
}

/// Time grid of a solve: snapshots every `snapshot_interval` up to `t_end`,
/// each interval split into equal steps no longer than `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveConfig {
    pub t_end: f64,
    pub dt: f64,
    pub snapshot_interval: f64,
}

impl SolveConfig {
    pub fn new(t_end: f64, dt: f64, snapshot_interval: f64) -> Self {
        Self {
            t_end,
            dt,
            snapshot_interval,
        }
    }

    /// `(snapshots after t = 0, steps per snapshot, effective step)`.
    pub fn schedule(&self) -> Result<(usize, usize, f64)> {
        if !(self.t_end > 0.0 && self.dt > 0.0 && self.snapshot_interval > 0.0) {
            return Err(Error::InvalidArgument(
                "t_end, dt and the snapshot interval must be positive".into(),
            ));
        }
        let ratio = self.t_end / self.snapshot_interval;
        let n_snap = ratio.round();
        if n_snap < 1.0 || (ratio - n_snap).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "t_end {} is not a multiple of the snapshot interval {}",
                self.t_end, self.snapshot_interval
            )));
        }
        let per = ((self.snapshot_interval / self.dt) - 1e-9).ceil().max(1.0) as usize;
        Ok((n_snap as usize, per, self.snapshot_interval / per as f64))
    }

    fn snapshot_time(&self, k: usize, n_snap: usize) -> f64 {
        if k == n_snap {
            self.t_end
        } else {
            k as f64 * self.snapshot_interval
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpkSolution {
    pub series: DensitySeries,
    /// Step actually used.
    pub dt: f64,
    pub stability_bound: f64,
    pub steps: usize,
}

impl FpkSolution {
    pub fn total_masses(&self) -> Vec<f64> {
        (0..self.series.len()).map(|k| self.series.total_mass(k)).collect()
    }

    /// `max_k |M(t_k) - M(0)| / t_k`.
    pub fn mass_drift_rate(&self) -> f64 {
        let m = self.total_masses();
        (1..m.len())
            .map(|k| (m[k] - m[0]).abs() / self.series.times[k])
            .fold(0.0, f64::max)
    }
}

/// Linear semi-discrete FPK system `dp/dt = (A + J) p`.
#[derive(Debug, Clone, PartialEq)]
pub struct FpkProblem {
    partition: Partition,
    lstar: CsrMatrix,
    jumps: Option<JumpGenerator>,
    jump_matrix: CsrMatrix,
}

fn positivity_bound(m: &CsrMatrix) -> f64 {
    let d = m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if d > 0.0 {
        1.0 / d
    } else {
        f64::INFINITY
    }
}

impl FpkProblem {
    fn build(partition: &Partition, lstar: CsrMatrix, jumps: Option<JumpGenerator>) -> Self {
        let n = partition.n_cells();
        let jump_matrix = jumps
            .as_ref()
            .map_or_else(|| CsrMatrix::zeros(n, n), JumpGenerator::density_matrix);
        Self {
            partition: partition.clone(),
            lstar,
            jumps,
            jump_matrix,
        }
    }

    /// Pure jump process on `partition`.
    pub fn master(generator: JumpGenerator) -> Self {
        let partition = generator.partition().clone();
        let n = partition.n_cells();
        Self::build(&partition, CsrMatrix::zeros(n, n), Some(generator))
    }

    /// Diffusion with spontaneous jumps; the jump source uses the dual
    /// kernel.
    pub fn spontaneous(model: &GshsModel, partition: &Partition) -> Result<Self> {
        if model.has_guard() {
            return Err(Error::Unsupported(
                "forced jumps need the thermostat solver".into(),
            ));
        }
        let lstar = assemble_lstar(model, partition)?;
        let jumps = if model.max_rate_bound() > 0.0 {
            Some(JumpGenerator::from_model(model, partition)?)
        } else {
            None
        };
        Ok(Self::build(partition, lstar, jumps))
    }

    /// Switching diffusion with explicit exchange terms between modes.
    pub fn switching(model: &GshsModel, partition: &Partition) -> Result<Self> {
        if model.has_guard() {
            return Err(Error::Unsupported(
                "forced jumps need the thermostat solver".into(),
            ));
        }
        if !matches!(model.reset_kernel(), ResetKernel::ModeSwitch { .. }) {
            return Err(Error::Unsupported(
                "switching solver needs a mode-switch reset kernel".into(),
            ));
        }
        let lstar = assemble_lstar(model, partition)?;
        Ok(Self::build(
            partition,
            lstar,
            Some(JumpGenerator::switching(model, partition)?),
        ))
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn lstar_matrix(&self) -> &CsrMatrix {
        &self.lstar
    }

    pub fn jump_generator(&self) -> Option<&JumpGenerator> {
        self.jumps.as_ref()
    }

    /// Largest step keeping both integrators positivity preserving.
    pub fn stability_bound(&self) -> f64 {
        positivity_bound(&self.lstar).min(0.5 * positivity_bound(&self.jump_matrix))
    }

    /// `L* mu` as mass rates per cell.
    pub fn lstar_mass_rates(&self, p: &GridDensity) -> CellMeasure {
        let rate = self.lstar.mul_vec(&p.values);
        CellMeasure {
            partition: self.partition.clone(),
            values: rate
                .iter()
                .enumerate()
                .map(|(c, r)| r * self.partition.cell_volume(c))
                .collect(),
        }
    }

    /// Sink and source of the jump part at density `p`.
    pub fn jump_rates(&self, p: &GridDensity) -> JumpRates {
        match &self.jumps {
            Some(g) => g.jump_rates(p),
            None => JumpRates {
                partition: self.partition.clone(),
                sink: vec![0.0; self.partition.n_cells()],
                source: vec![0.0; self.partition.n_cells()],
            },
        }
    }

    pub fn solve(&self, p0: &GridDensity, cfg: &SolveConfig) -> Result<FpkSolution> {
        if p0.partition != self.partition {
            return Err(Error::PartitionMismatch);
        }
        let (n_snap, per, dt) = cfg.schedule()?;
        let bound = self.stability_bound();
        if dt > bound * (1.0 + 1e-12) {
            return Err(Error::Stability { dt, bound });
        }
        let has_l = !self.lstar.is_empty();
        let has_j = !self.jump_matrix.is_empty();
        let n = self.partition.n_cells();
        let mut p = p0.values.clone();
        let mut work = Workspace::new(n);
        let mut times = vec![0.0];
        let mut values = vec![p.clone()];
        let mut steps = 0;
        for k in 1..=n_snap {
            for s in 0..per {
                match (has_l, has_j) {
                    (true, true) => {
                        rk4(&self.jump_matrix, &mut p, 0.5 * dt, &mut work);
                        ssp_rk2(&self.lstar, &mut p, dt, &mut work);
                        rk4(&self.jump_matrix, &mut p, 0.5 * dt, &mut work);
                    }
                    (true, false) => ssp_rk2(&self.lstar, &mut p, dt, &mut work),
                    (false, true) => rk4(&self.jump_matrix, &mut p, dt, &mut work),
                    (false, false) => {}
                }
                steps += 1;
                let t = ((k - 1) * per + s + 1) as f64 * dt;
                check_nonnegative(&p, t)?;
            }
            times.push(cfg.snapshot_time(k, n_snap));
            values.push(p.clone());
        }
        Ok(FpkSolution {
            series: DensitySeries {
                partition: self.partition.clone(),
                times,
                values,
            },
            dt,
            stability_bound: bound,
            steps,
        })
    }
}

pub(crate) fn check_nonnegative(p: &[f64], time: f64) -> Result<()> {
    match p.iter().enumerate().find(|(_, &v)| v < -NEGATIVE_TOLERANCE) {
        Some((cell, &value)) => Err(Error::NegativeDensity { cell, value, time }),
        None => Ok(()),
    }
}

pub(crate) struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn axpy_into(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// One classical RK4 step of `dp/dt = M p`.
fn rk4(m: &CsrMatrix, p: &mut [f64], dt: f64, w: &mut Workspace) {
    m.mul_vec_into(p, &mut w.k1);
    axpy_into(&mut w.tmp, p, 0.5 * dt, &w.k1);
    m.mul_vec_into(&w.tmp, &mut w.k2);
    axpy_into(&mut w.tmp, p, 0.5 * dt, &w.k2);
    m.mul_vec_into(&w.tmp, &mut w.k3);
    axpy_into(&mut w.tmp, p, dt, &w.k3);
    m.mul_vec_into(&w.tmp, &mut w.k4);
    for i in 0..p.len() {
        p[i] += dt / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    }
}

/// One SSP-RK2 (Heun) step of `dp/dt = M p`.
fn ssp_rk2(m: &CsrMatrix, p: &mut [f64], dt: f64, w: &mut Workspace) {
    m.mul_vec_into(p, &mut w.k1);
    axpy_into(&mut w.tmp, p, dt, &w.k1);
    m.mul_vec_into(&w.tmp, &mut w.k2);
    for i in 0..p.len() {
        p[i] += 0.5 * dt * (w.k1[i] + w.k2[i]);
    }
}

/// Master equation for a pure jump process.
pub fn solve_master_equation(
    generator: &JumpGenerator,
    p0: &GridDensity,
    cfg: &SolveConfig,
) -> Result<FpkSolution> {
    FpkProblem::master(generator.clone()).solve(p0, cfg)
}

/// `dp/dt = L* p + K*(lambda p) - lambda p` for guard-free models.
pub fn solve_spontaneous_fpk(model: &GshsModel, p0: &GridDensity, cfg: &SolveConfig) -> Result<FpkSolution> {
    FpkProblem::spontaneous(model, &p0.partition)?.solve(p0, cfg)
}

/// Switching-diffusion FPK with exchange terms between modes.
pub fn solve_switching_fpk(model: &GshsModel, p0: &GridDensity, cfg: &SolveConfig) -> Result<FpkSolution> {
    FpkProblem::switching(model, &p0.partition)?.solve(p0, cfg)
}
