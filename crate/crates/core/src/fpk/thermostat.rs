//! Forced jumps through a guard on the two-mode thermostat template.
//!
//! Mode `q` lives on a half line whose finite end `g_q` is the guard; the
//! reset keeps `z` and switches to the other mode. Inside each mode the
//! density follows the finite-volume `L*` with no-flux faces. On a guard
//! face the density is held at zero (absorbing condition) and the outgoing
//! flux, computed from that Dirichlet value and the adjacent cell, is
//! removed from the guard cell. Exactly the same amount is injected in the
//! other mode on the face at `g_q`, split between the two cells sharing it
//! (all into the downwind cell without diffusion). The extracted flux is the
//! forced mean jump intensity.

use serde::Serialize;

use super::operator::{assemble_lstar, bernoulli, check_partition};
use super::sparse::CsrMatrix;
use super::{check_nonnegative, DensitySeries, FpkSolution, GridDensity, SolveConfig, Workspace};
use crate::error::{Error, Result};
use crate::estimation::{CellMeasure, JumpRates};
use crate::model::GshsModel;
use crate::state_space::{HybridState, ModeGrid, Partition, Side};

/// One guard face and where its flux goes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardLink {
    pub mode: usize,
    pub side: Side,
    pub coord: f64,
    /// Cell adjacent to the guard face.
    pub guard_cell: usize,
    /// Outward normal drift and diffusion at the face.
    #[serde(skip)]
    outflow_coefficient: f64,
    /// Cells receiving the flux and their shares.
    pub targets: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermostatProblem {
    partition: Partition,
    lstar: CsrMatrix,
    links: Vec<GuardLink>,
}

/// Per-step extracted and injected masses, one entry per guard face.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxRecord {
    pub faces: Vec<GuardLink>,
    /// End time of each step.
    pub times: Vec<f64>,
    pub extracted: Vec<Vec<f64>>,
    pub injected: Vec<Vec<f64>>,
    /// Steps on which a negative outgoing flux was clipped to zero.
    pub clipped: usize,
}

impl FluxRecord {
    /// Average total outgoing flux over `(t0, t1]`, i.e. `r_t(E)`.
    pub fn mean_rate(&self, t0: f64, t1: f64) -> f64 {
        let eps = 1e-9 * t1.abs().max(1.0);
        let total: f64 = self
            .times
            .iter()
            .zip(&self.extracted)
            .filter(|(&t, _)| t > t0 + eps && t <= t1 + eps)
            .map(|(_, e)| e.iter().sum::<f64>())
            .sum();
        total / (t1 - t0)
    }

    /// Per-face flux `j_out` on each step.
    pub fn step_rates(&self) -> Vec<(f64, Vec<f64>)> {
        let mut prev = 0.0;
        self.times
            .iter()
            .zip(&self.extracted)
            .map(|(&t, e)| {
                let dt = t - prev;
                prev = t;
                (t, e.iter().map(|m| m / dt).collect())
            })
            .collect()
    }

    /// Largest `|extracted - injected|` over steps and faces.
    pub fn max_transfer_mismatch(&self) -> f64 {
        self.extracted
            .iter()
            .zip(&self.injected)
            .flat_map(|(e, i)| e.iter().zip(i).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn total_extracted(&self) -> f64 {
        self.extracted.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermostatSolution {
    pub solution: FpkSolution,
    pub flux: FluxRecord,
    /// Density on each guard face per snapshot.
    pub guard_values: Vec<Vec<f64>>,
}

fn mode_line(partition: &Partition, q: usize) -> Result<(f64, f64, usize)> {
    match partition.grid(q) {
        ModeGrid::Grid { lower, upper, cells } if cells.len() == 1 => Ok((lower[0], upper[0], cells[0])),
        _ => Err(Error::Unsupported(
            "thermostat template needs one-dimensional modes".into(),
        )),
    }
}

impl ThermostatProblem {
    pub fn new(model: &GshsModel, partition: &Partition) -> Result<Self> {
        check_partition(model, partition)?;
        let space = model.space();
        let unsupported = |m: &str| Err(Error::Unsupported(format!("thermostat template: {m}")));
        if space.n_modes() != 2 {
            return unsupported("exactly two modes");
        }
        if model.max_rate_bound() > 0.0 {
            return unsupported("no spontaneous jumps");
        }
        let lstar = assemble_lstar(model, partition)?;
        let mut links = Vec::new();
        for q in 0..2 {
            let mode = &space.modes()[q];
            if mode.dim() != 1 || mode.guard_faces.len() != 1 || !mode.guard_faces[0].restrict.is_empty() {
                return unsupported("one guard point per one-dimensional mode");
            }
            let side = mode.guard_faces[0].side;
            let g = mode.face_coord(0, side);
            let pre = HybridState::new(q, vec![g]);
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let post = model.reset_sample(&pre, &mut rng)?;
            if post != HybridState::new(1 - q, vec![g]) {
                return unsupported("reset must switch mode and keep z");
            }
            let (lo, hi, n) = mode_line(partition, q)?;
            let h = (hi - lo) / n as f64;
            let tol = 1e-9 * h;
            let guard_cell = match side {
                Side::Lower if (lo - g).abs() <= tol => partition.cell_at(q, &[0]),
                Side::Upper if (hi - g).abs() <= tol => partition.cell_at(q, &[n - 1]),
                _ => return unsupported("grid must end on the guard face"),
            };
            let a = model.diffusion_matrix(&pre)[(0, 0)];
            if !(a > 0.0) {
                return unsupported("noise must be transverse to the guard");
            }
            let f = model.drift(&pre)[0];
            let f_out = match side {
                Side::Lower => -f,
                Side::Upper => f,
            };
            let center = partition.center(guard_cell);
            let a_cell = model.diffusion_matrix(&center)[(0, 0)];
            let outflow_coefficient = bernoulli(-f_out * h / a) * a_cell / h;

            // image face in the other mode
            let p = 1 - q;
            let (plo, phi, pn) = mode_line(partition, p)?;
            let ph = (phi - plo) / pn as f64;
            let s = (g - plo) / ph;
            let k = s.round();
            if (s - k).abs() > 1e-9 || k < 1.0 || k > (pn - 1) as f64 {
                return unsupported("image of the guard must be an interior face of the other grid");
            }
            let below = partition.cell_at(p, &[k as usize - 1]);
            let above = partition.cell_at(p, &[k as usize]);
            let image = HybridState::new(p, vec![g]);
            let a_image = model.diffusion_matrix(&image)[(0, 0)];
            let targets = if a_image > 0.0 {
                vec![(below, 0.5), (above, 0.5)]
            } else if model.drift(&image)[0] >= 0.0 {
                vec![(above, 1.0)]
            } else {
                vec![(below, 1.0)]
            };
            links.push(GuardLink {
                mode: q,
                side,
                coord: g,
                guard_cell,
                outflow_coefficient,
                targets,
            });
        }
        Ok(Self {
            partition: partition.clone(),
            lstar,
            links,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn links(&self) -> &[GuardLink] {
        &self.links
    }

    /// Outgoing flux per guard face at density `p`, and whether any was
    /// clipped.
    fn outflows(&self, p: &[f64]) -> (Vec<f64>, bool) {
        let mut clipped = false;
        let f = self
            .links
            .iter()
            .map(|l| {
                let v = l.outflow_coefficient * p[l.guard_cell];
                if v < 0.0 {
                    clipped = true;
                    0.0
                } else {
                    v
                }
            })
            .collect();
        (f, clipped)
    }

    /// Density rate with the guard outflow and injection; returns the
    /// per-face fluxes used.
    fn rhs(&self, p: &[f64], out: &mut [f64]) -> (Vec<f64>, bool) {
        self.lstar.mul_vec_into(p, out);
        let (flux, clipped) = self.outflows(p);
        for (l, &f) in self.links.iter().zip(&flux) {
            out[l.guard_cell] -= f / self.partition.cell_volume(l.guard_cell);
            for &(c, share) in &l.targets {
                out[c] += share * f / self.partition.cell_volume(c);
            }
        }
        (flux, clipped)
    }

    pub fn stability_bound(&self) -> f64 {
        let mut diag = self.lstar.diagonal();
        for l in &self.links {
            diag[l.guard_cell] -= l.outflow_coefficient / self.partition.cell_volume(l.guard_cell);
        }
        let d = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if d > 0.0 {
            1.0 / d
        } else {
            f64::INFINITY
        }
    }

    /// `L* mu` with no-flux faces, as mass rates.
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

    /// Sink (guard outflow) and source (injection) as mass rates.
    pub fn jump_rates(&self, p: &GridDensity) -> JumpRates {
        let n = self.partition.n_cells();
        let mut sink = vec![0.0; n];
        let mut source = vec![0.0; n];
        let (flux, _) = self.outflows(&p.values);
        for (l, &f) in self.links.iter().zip(&flux) {
            sink[l.guard_cell] += f;
            for &(c, share) in &l.targets {
                source[c] += share * f;
            }
        }
        JumpRates {
            partition: self.partition.clone(),
            sink,
            source,
        }
    }

    pub fn solve(&self, p0: &GridDensity, cfg: &SolveConfig) -> Result<ThermostatSolution> {
        if p0.partition != self.partition {
            return Err(Error::PartitionMismatch);
        }
        let (n_snap, per, dt) = cfg.schedule()?;
        let bound = self.stability_bound();
        if dt > bound * (1.0 + 1e-12) {
            return Err(Error::Stability { dt, bound });
        }
        let n = self.partition.n_cells();
        let mut p = p0.values.clone();
        let mut w = Workspace::new(n);
        let mut flux = FluxRecord {
            faces: self.links.clone(),
            times: Vec::with_capacity(n_snap * per),
            extracted: Vec::with_capacity(n_snap * per),
            injected: Vec::with_capacity(n_snap * per),
            clipped: 0,
        };
        let mut times = vec![0.0];
        let mut values = vec![p.clone()];
        let mut guard_values = vec![vec![0.0; self.links.len()]];
        let mut steps = 0;
        for k in 1..=n_snap {
            for s in 0..per {
                let (f1, c1) = self.rhs(&p, &mut w.k1);
                for i in 0..n {
                    w.tmp[i] = p[i] + dt * w.k1[i];
                }
                let (f2, c2) = self.rhs(&w.tmp, &mut w.k2);
                for i in 0..n {
                    p[i] += 0.5 * dt * (w.k1[i] + w.k2[i]);
                }
                flux.clipped += usize::from(c1 || c2);
                let mut extracted = Vec::with_capacity(self.links.len());
                let mut injected = Vec::with_capacity(self.links.len());
                for (j, l) in self.links.iter().enumerate() {
                    let vol = self.partition.cell_volume(l.guard_cell);
                    extracted.push(0.5 * dt * (f1[j] / vol + f2[j] / vol) * vol);
                    injected.push(
                        l.targets
                            .iter()
                            .map(|&(c, share)| {
                                let v = self.partition.cell_volume(c);
                                0.5 * dt * (share * f1[j] / v + share * f2[j] / v) * v
                            })
                            .sum(),
                    );
                }
                steps += 1;
                let t = ((k - 1) * per + s + 1) as f64 * dt;
                flux.times.push(t);
                flux.extracted.push(extracted);
                flux.injected.push(injected);
                check_nonnegative(&p, t)?;
            }
            times.push(if k == n_snap {
                cfg.t_end
            } else {
                k as f64 * cfg.snapshot_interval
            });
            values.push(p.clone());
            // Dirichlet value imposed on every guard face
            guard_values.push(vec![0.0; self.links.len()]);
        }
        Ok(ThermostatSolution {
            solution: FpkSolution {
                series: DensitySeries {
                    partition: self.partition.clone(),
                    times,
                    values,
                },
                dt,
                stability_bound: bound,
                steps,
            },
            flux,
            guard_values,
        })
    }
}

/// Thermostat FPK with absorbing guards and flux-matched injection.
pub fn solve_forced_thermostat(
    model: &GshsModel,
    p0: &GridDensity,
    cfg: &SolveConfig,
) -> Result<ThermostatSolution> {
    ThermostatProblem::new(model, &p0.partition)?.solve(p0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{vector_field, ResetKernel, ResetMap};
    use crate::state_space::{GridSpec, GuardFace, ModeSpec, StateSpace};

    fn thermostat(v: f64, sigma: f64) -> GshsModel {
        let space = StateSpace::new(vec![
            ModeSpec::continuous(0, vec![(-1.0, f64::INFINITY)]).with_guard(GuardFace::new(0, Side::Lower)),
            ModeSpec::continuous(1, vec![(f64::NEG_INFINITY, 1.0)]).with_guard(GuardFace::new(0, Side::Upper)),
        ])
        .unwrap();
        GshsModel::builder(space)
            .drift(vector_field(move |q, _, out| out[0] = if q == 0 { -v } else { v }))
            .noise(vector_field(move |_, _, out| out[0] = sigma))
            .reset(ResetKernel::Map(ResetMap::new(|x| HybridState::new(1 - x.q, x.z.clone()))))
            .build()
            .unwrap()
    }

    fn grid(m: &GshsModel, h: f64) -> Partition {
        let n = (4.0 / h).round() as usize;
        Partition::new(
            m.space(),
            vec![
                GridSpec::truncated(vec![n], vec![(-1.0, 3.0)]),
                GridSpec::truncated(vec![n], vec![(-3.0, 1.0)]),
            ],
        )
        .unwrap()
    }

    fn start(part: &Partition) -> GridDensity {
        let values = (0..part.n_cells())
            .map(|c| {
                let x = part.center(c);
                if x.q == 0 && x.z[0].abs() < 0.5 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        GridDensity::new(part.clone(), values, 0.0).unwrap()
    }

    #[test]
    fn flux_is_conserved_and_transferred() {
        let m = thermostat(1.0, 0.5);
        let part = grid(&m, 0.025);
        let sol = solve_forced_thermostat(&m, &start(&part), &SolveConfig::new(5.0, 1e-3, 0.25)).unwrap();
        assert!(sol.flux.max_transfer_mismatch() <= 1e-15);
        assert!(sol.solution.mass_drift_rate() < 1e-12);
        assert_eq!(sol.flux.clipped, 0);
        assert!(sol.flux.total_extracted() > 1.0);
        let r = sol.flux.mean_rate(1.0, 5.0);
        assert!(r > 0.2 && r < 1.0, "{r}");
    }

    #[test]
    fn symmetric_thermostat_keeps_modes_balanced() {
        let m = thermostat(0.0, 2f64.sqrt());
        let part = grid(&m, 0.05);
        // mirror image across z = 0 between the modes
        let values: Vec<f64> = (0..part.n_cells())
            .map(|c| {
                let x = part.center(c);
                let z = if x.q == 0 { x.z[0] } else { -x.z[0] };
                (-(z - 0.5).powi(2) * 4.0).exp()
            })
            .collect();
        let p0 = GridDensity::new(part.clone(), values, 0.0).unwrap();
        let sol = solve_forced_thermostat(&m, &p0, &SolveConfig::new(1.0, 5e-4, 0.25)).unwrap();
        for k in 0..sol.solution.series.len() {
            let mm = sol.solution.series.snapshot(k).mode_masses();
            assert!((mm[0] - mm[1]).abs() < 1e-12);
        }
        assert!(sol.solution.mass_drift_rate() < 1e-6);
    }

    #[test]
    fn rejects_models_outside_template() {
        let space = StateSpace::new(vec![ModeSpec::continuous(0, vec![(0.0, 1.0)])
            .with_guard(GuardFace::new(0, Side::Upper))])
        .unwrap();
        let conveyor = GshsModel::builder(space)
            .drift(vector_field(|_, _, out| out[0] = 1.0))
            .reset(ResetKernel::Map(ResetMap::new(|_| HybridState::new(0, vec![0.0]))))
            .build()
            .unwrap();
        let part = Partition::new(conveyor.space(), vec![GridSpec::uniform(vec![10])]).unwrap();
        assert!(matches!(
            ThermostatProblem::new(&conveyor, &part),
            Err(Error::Unsupported(_))
        ));
        let m = thermostat(1.0, 0.0);
        let part = grid(&m, 0.1);
        assert!(matches!(ThermostatProblem::new(&m, &part), Err(Error::Unsupported(_))));
    }

    #[test]
    fn step_beyond_bound_is_rejected() {
        let m = thermostat(1.0, 0.5);
        let part = grid(&m, 0.025);
        let p = ThermostatProblem::new(&m, &part).unwrap();
        let bound = p.stability_bound();
        match p.solve(&start(&part), &SolveConfig::new(0.1, 2.0 * bound, 0.1)) {
            Err(Error::Stability { bound: b, .. }) => assert_eq!(b, bound),
            other => panic!("{other:?}"),
        }
    }
}
