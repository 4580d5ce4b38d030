//! Sample paths of a GSHS.
//!
//! Between jumps the continuous state follows an Euler-Maruyama step. After
//! each step the earliest of two events is applied:
//!
//! * a guard crossing, located by linear interpolation along the step, which
//!   triggers a forced jump from the crossing point;
//! * a spontaneous jump, accepted with probability `1 - exp(-lambda h)`
//!   (rate evaluated at the step start) at a uniformly drawn time inside
//!   the step.
//!
//! Non-guard faces clamp the state to the box. The step grid stays aligned
//! on multiples of `dt`: after a jump the remainder of the step is
//! integrated before the next full step.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GshsModel;
use crate::state_space::{HybridState, Side};

pub type PathRng = ChaCha8Rng;

/// Independent stream for path `index` of an ensemble seeded by
/// `master_seed`.
pub fn path_rng(master_seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Sampler of the initial law.
pub trait InitialSampler: Sync {
    fn sample(&self, rng: &mut PathRng) -> HybridState;
}

impl<F> InitialSampler for F
where
    F: Fn(&mut PathRng) -> HybridState + Sync,
{
    fn sample(&self, rng: &mut PathRng) -> HybridState {
        self(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpKind {
    Spontaneous,
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub time: f64,
    /// Left limit at the jump time.
    pub pre: HybridState,
    pub post: HybridState,
    pub kind: JumpKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    Completed,
    ZenoAborted,
    Escaped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub max_jumps: usize,
    /// Distance to a guard face under which a state counts as on the guard.
    pub guard_tol: f64,
    /// `|z_i|` beyond which a path is declared escaped.
    pub overflow: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_jumps: 1_000_000,
            guard_tol: 1e-9,
            overflow: 1e8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Record the state every `record_stride` steps (and at `t_end`).
    pub record_stride: usize,
    pub caps: Caps,
}

impl PathConfig {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            record_stride: 1,
            caps: Caps::default(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) || !(self.dt > 0.0) || self.record_stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "need t_end > 0, dt > 0 and a positive stride (got {}, {}, {})",
                self.t_end, self.dt, self.record_stride
            )));
        }
        Ok(())
    }

    /// Number of steps; the effective step is `t_end / n_steps <= dt`.
    pub fn n_steps(&self) -> usize {
        ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.n_steps() as f64
    }

    fn grid_time(&self, k: usize) -> f64 {
        let n = self.n_steps();
        if k == n {
            self.t_end
        } else {
            k as f64 * self.step()
        }
    }

    /// Step indices and times at which states are recorded.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.n_steps();
        (0..=n)
            .filter(|&k| k % self.record_stride == 0 || k == n)
            .map(|k| self.grid_time(k))
            .collect()
    }
}

/// One sample path. States are stored compactly; a path that stopped early
/// has no state at later sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Arc<Vec<f64>>,
    mode_dims: Arc<Vec<usize>>,
    stride: usize,
    modes: Vec<u32>,
    coords: Vec<f64>,
    pub jumps: Vec<JumpRecord>,
    pub status: PathStatus,
    pub steps: u64,
}

const NO_STATE: u32 = u32::MAX;

impl Trajectory {
    pub fn sample_times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    /// State at sample `k` as `(mode, z)`, or `None` if the path stopped.
    pub fn state_view(&self, k: usize) -> Option<(usize, &[f64])> {
        let q = *self.modes.get(k)?;
        if q == NO_STATE {
            return None;
        }
        let q = q as usize;
        let start = k * self.stride;
        Some((q, &self.coords[start..start + self.mode_dims[q]]))
    }

    pub fn state(&self, k: usize) -> Option<HybridState> {
        self.state_view(k)
            .map(|(q, z)| HybridState::new(q, z.to_vec()))
    }

    /// `N_t`: number of jumps in `(0, t]`.
    pub fn n_jumps_until(&self, t: f64) -> usize {
        self.jumps.partition_point(|j| j.time <= t)
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }
}

struct Recorder {
    times: Arc<Vec<f64>>,
    mode_dims: Arc<Vec<usize>>,
    stride: usize,
    modes: Vec<u32>,
    coords: Vec<f64>,
}

impl Recorder {
    fn push(&mut self, q: usize, z: &[f64]) {
        self.modes.push(q as u32);
        let start = self.coords.len();
        self.coords.resize(start + self.stride, 0.0);
        self.coords[start..start + z.len()].copy_from_slice(z);
    }

    fn finish(mut self, jumps: Vec<JumpRecord>, status: PathStatus, steps: u64) -> Trajectory {
        while self.modes.len() < self.times.len() {
            self.modes.push(NO_STATE);
            self.coords.resize(self.coords.len() + self.stride, 0.0);
        }
        Trajectory {
            times: self.times,
            mode_dims: self.mode_dims,
            stride: self.stride,
            modes: self.modes,
            coords: self.coords,
            jumps,
            status,
            steps,
        }
    }
}

/// Simulate one path on `[0, t_end]` from `x0`.
pub fn simulate_path(
    model: &GshsModel,
    x0: &HybridState,
    cfg: &PathConfig,
    rng: &mut PathRng,
) -> Result<Trajectory> {
    cfg.validate()?;
    let times = Arc::new(cfg.sample_times());
    let dims = Arc::new(model.space().modes().iter().map(|m| m.dim()).collect());
    simulate_path_shared(model, x0, cfg, rng, times, dims)
}

fn simulate_path_shared(
    model: &GshsModel,
    x0: &HybridState,
    cfg: &PathConfig,
    rng: &mut PathRng,
    times: Arc<Vec<f64>>,
    mode_dims: Arc<Vec<usize>>,
) -> Result<Trajectory> {
    let space = model.space();
    space.check_state(x0)?;
    if space.in_guard(x0, cfg.caps.guard_tol) {
        return Err(Error::InvalidState(format!(
            "initial state {x0:?} lies on the guard"
        )));
    }
    let n_steps = cfg.n_steps();
    let stride = space.max_dim();
    let mut rec = Recorder {
        times,
        mode_dims,
        stride,
        modes: Vec::new(),
        coords: Vec::new(),
    };
    let n_noise = model.n_noise();
    let mut q = x0.q;
    let mut z = x0.z.clone();
    let mut zp = vec![0.0; stride];
    let mut f = vec![0.0; stride];
    let mut jumps: Vec<JumpRecord> = Vec::new();
    let mut steps: u64 = 0;
    let mut t = 0.0;

    rec.push(q, &z);
    for k in 1..=n_steps {
        let target = cfg.grid_time(k);
        while t < target {
            let h = target - t;
            steps += 1;
            let mode = &space.modes()[q];
            let dim = z.len();
            let zp = &mut zp[..dim];
            let f = &mut f[..dim];

            // Euler-Maruyama proposal
            zp.copy_from_slice(&z);
            if dim > 0 {
                model.drift_into(q, &z, f);
                for i in 0..dim {
                    zp[i] += f[i] * h;
                }
                let sqrt_h = h.sqrt();
                for l in 0..n_noise {
                    let xi: f64 = rng.sample(StandardNormal);
                    model.noise_into(l, q, &z, f);
                    for i in 0..dim {
                        zp[i] += f[i] * sqrt_h * xi;
                    }
                }
            }

            // earliest guard crossing along the step
            let mut crossing: Option<(f64, usize, f64)> = None;
            for face in &mode.guard_faces {
                let c = mode.face_coord(face.axis, face.side);
                let (from, to) = (z[face.axis], zp[face.axis]);
                let crossed = match face.side {
                    Side::Lower => to <= c,
                    Side::Upper => to >= c,
                };
                if !crossed {
                    continue;
                }
                let theta = if to == from {
                    0.0
                } else {
                    ((c - from) / (to - from)).clamp(0.0, 1.0)
                };
                let inside = face.restrict.iter().all(|&(a, lo, hi)| {
                    let v = z[a] + theta * (zp[a] - z[a]);
                    v >= lo && v <= hi
                });
                if inside && crossing.map_or(true, |(best, _, _)| theta < best) {
                    crossing = Some((theta, face.axis, c));
                }
            }

            let lam = model.rate(q, &z);
            let bound = model.rate_bound(q);
            if lam > bound * (1.0 + 1e-9) {
                return Err(Error::RateBoundExceeded {
                    mode: q,
                    rate: lam,
                    bound,
                });
            }
            let spontaneous = if lam > 0.0 {
                let u: f64 = rng.gen();
                if u < -(-lam * h).exp_m1() {
                    Some(rng.gen::<f64>() * h)
                } else {
                    None
                }
            } else {
                None
            };

            let event = match (crossing, spontaneous) {
                (Some((theta, _, _)), Some(s)) if s < theta * h => Some((JumpKind::Spontaneous, s)),
                (Some((theta, _, _)), _) => Some((JumpKind::Forced, theta * h)),
                (None, Some(s)) => Some((JumpKind::Spontaneous, s)),
                (None, None) => None,
            };

            match event {
                None => {
                    for (i, &(lo, hi)) in mode.bounds.iter().enumerate() {
                        zp[i] = zp[i].clamp(lo, hi);
                    }
                    z.copy_from_slice(zp);
                    t = target;
                    if z.iter().any(|v| !v.is_finite() || v.abs() > cfg.caps.overflow) {
                        return Ok(rec.finish(jumps, PathStatus::Escaped, steps));
                    }
                }
                Some((kind, offset)) => {
                    let pre = match kind {
                        JumpKind::Forced => {
                            let (theta, axis, c) = crossing.expect("forced jump needs a crossing");
                            let mut pz: Vec<f64> =
                                (0..dim).map(|i| z[i] + theta * (zp[i] - z[i])).collect();
                            pz[axis] = c;
                            for (i, &(lo, hi)) in mode.bounds.iter().enumerate() {
                                pz[i] = pz[i].clamp(lo, hi);
                            }
                            HybridState::new(q, pz)
                        }
                        JumpKind::Spontaneous => HybridState::new(q, z.clone()),
                    };
                    let post = model.reset_sample(&pre, rng)?;
                    space.check_state(&post).map_err(|e| {
                        Error::InvalidModel(format!("reset produced an invalid state: {e}"))
                    })?;
                    if space.in_guard(&post, cfg.caps.guard_tol) {
                        return Err(Error::InvalidModel(format!(
                            "reset from {pre:?} landed in the guard at {post:?}"
                        )));
                    }
                    t += offset;
                    q = post.q;
                    z.clear();
                    z.extend_from_slice(&post.z);
                    jumps.push(JumpRecord {
                        time: t,
                        pre,
                        post,
                        kind,
                    });
                    if jumps.len() > cfg.caps.max_jumps {
                        return Ok(rec.finish(jumps, PathStatus::ZenoAborted, steps));
                    }
                }
            }
        }
        if k % cfg.record_stride == 0 || k == n_steps {
            rec.push(q, &z);
        }
    }
    Ok(rec.finish(jumps, PathStatus::Completed, steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    pub path: PathConfig,
}

/// Counters over an ensemble; everything here is a deterministic function
/// of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_paths: usize,
    pub completed: usize,
    pub zeno_aborted: usize,
    pub escaped: usize,
    pub total_jumps: u64,
    pub spontaneous_jumps: u64,
    pub forced_jumps: u64,
    pub total_steps: u64,
    pub mean_jump_count: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub config: EnsembleConfig,
    pub trajectories: Vec<Trajectory>,
}

impl EnsembleSummary {
    pub fn n_paths(&self) -> usize {
        self.trajectories.len()
    }

    pub fn sample_times(&self) -> &[f64] {
        self.trajectories
            .first()
            .map(Trajectory::sample_times)
            .unwrap_or(&[])
    }

    pub fn stats(&self) -> EnsembleStats {
        let count = |s: PathStatus| self.trajectories.iter().filter(|t| t.status == s).count();
        let kind_count = |k: JumpKind| -> u64 {
            self.trajectories
                .iter()
                .map(|t| t.jumps.iter().filter(|j| j.kind == k).count() as u64)
                .sum()
        };
        let spontaneous = kind_count(JumpKind::Spontaneous);
        let forced = kind_count(JumpKind::Forced);
        EnsembleStats {
            n_paths: self.n_paths(),
            completed: count(PathStatus::Completed),
            zeno_aborted: count(PathStatus::ZenoAborted),
            escaped: count(PathStatus::Escaped),
            total_jumps: spontaneous + forced,
            spontaneous_jumps: spontaneous,
            forced_jumps: forced,
            total_steps: self.trajectories.iter().map(|t| t.steps).sum(),
            mean_jump_count: expected_jump_count(self),
        }
    }
}

/// Run `n_paths` independent paths. Path `i` uses the stream
/// `path_rng(master_seed, i)` both for its initial state and its dynamics,
/// so the result does not depend on scheduling or worker count.
pub fn simulate_ensemble<S: InitialSampler + ?Sized>(
    model: &GshsModel,
    mu0: &S,
    cfg: &EnsembleConfig,
) -> Result<EnsembleSummary> {
    cfg.path.validate()?;
    if cfg.n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
    }
    let times = Arc::new(cfg.path.sample_times());
    let dims: Arc<Vec<usize>> = Arc::new(model.space().modes().iter().map(|m| m.dim()).collect());
    let trajectories = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.master_seed, i as u64);
            let x0 = mu0.sample(&mut rng);
            simulate_path_shared(model, &x0, &cfg.path, &mut rng, times.clone(), dims.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleSummary {
        config: *cfg,
        trajectories,
    })
}

/// Mean of `N_t` at the end of the run.
pub fn expected_jump_count(summary: &EnsembleSummary) -> f64 {
    if summary.trajectories.is_empty() {
        return 0.0;
    }
    let total: usize = summary.trajectories.iter().map(Trajectory::n_jumps).sum();
    total as f64 / summary.n_paths() as f64
}

/// Mean of `N_t` at time `t`.
pub fn expected_jump_count_at(summary: &EnsembleSummary, t: f64) -> f64 {
    if summary.trajectories.is_empty() {
        return 0.0;
    }
    let total: usize = summary
        .trajectories
        .iter()
        .map(|tr| tr.n_jumps_until(t))
        .sum();
    total as f64 / summary.n_paths() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{scalar_field, vector_field, ResetKernel, ResetMap};
    use crate::state_space::{GuardFace, ModeSpec, StateSpace};

    fn conveyor(v: f64) -> GshsModel {
        let space = StateSpace::new(vec![ModeSpec::continuous(0, vec![(0.0, 1.0)])
            .with_guard(GuardFace::new(0, Side::Upper))])
        .unwrap();
        GshsModel::builder(space)
            .drift(vector_field(move |_, _, out| out[0] = v))
            .reset(ResetKernel::Map(ResetMap::new(|x| HybridState::new(x.q, vec![0.0]))))
            .build()
            .unwrap()
    }

    fn ctmc2(rate: f64) -> GshsModel {
        let space = StateSpace::new(vec![ModeSpec::discrete(0), ModeSpec::discrete(1)]).unwrap();
        GshsModel::builder(space)
            .rate(scalar_field(move |_, _| rate), vec![rate, rate])
            .reset(ResetKernel::ModeSwitch {
                n_modes: 2,
                switch: Arc::new(|q, p, _| if q != p { 1.0 } else { 0.0 }),
            })
            .build()
            .unwrap()
    }

    #[test]
    fn conveyor_jumps_at_integer_times() {
        let m = conveyor(1.0);
        let cfg = PathConfig::new(2.5, 1e-3);
        let mut rng = path_rng(1, 0);
        let tr = simulate_path(&m, &HybridState::new(0, vec![0.0]), &cfg, &mut rng).unwrap();
        assert_eq!(tr.status, PathStatus::Completed);
        assert_eq!(tr.n_jumps(), 2);
        for (k, j) in tr.jumps.iter().enumerate() {
            assert!((j.time - (k + 1) as f64).abs() <= 1e-3, "{}", j.time);
            assert_eq!(j.kind, JumpKind::Forced);
            assert_eq!(j.pre, HybridState::new(0, vec![1.0]));
            assert_eq!(j.post, HybridState::new(0, vec![0.0]));
        }
        assert!(tr.jumps[0].time < tr.jumps[1].time);
    }

    #[test]
    fn frozen_model_gives_constant_path() {
        let space = StateSpace::new(vec![ModeSpec::continuous(0, vec![(-1.0, 1.0)])]).unwrap();
        let m = GshsModel::builder(space)
            .reset(ResetKernel::Map(ResetMap::identity()))
            .build()
            .unwrap();
        let cfg = PathConfig::new(1.0, 0.01).with_stride(10);
        let x0 = HybridState::new(0, vec![0.3]);
        let tr = simulate_path(&m, &x0, &cfg, &mut path_rng(0, 0)).unwrap();
        assert_eq!(tr.n_jumps(), 0);
        assert_eq!(tr.n_samples(), 11);
        for k in 0..tr.n_samples() {
            assert_eq!(tr.state(k).unwrap(), x0);
        }
    }

    #[test]
    fn ctmc_holding_times_are_exponential() {
        let rate = 2.0;
        let m = ctmc2(rate);
        let cfg = PathConfig::new(50_000.0, 0.01).with_stride(usize::MAX);
        let tr = simulate_path(&m, &HybridState::discrete(0), &cfg, &mut path_rng(5, 0)).unwrap();
        assert!(tr.n_jumps() > 99_000);
        let holding: Vec<f64> = tr.jumps.windows(2).map(|w| w[1].time - w[0].time).collect();
        let mean = holding.iter().sum::<f64>() / holding.len() as f64;
        assert!((mean * rate - 1.0).abs() < 0.02, "mean holding {mean}");
        assert!(tr.jumps.iter().all(|j| j.kind == JumpKind::Spontaneous));
        assert!(tr.jumps.iter().all(|j| j.pre.q != j.post.q));
    }

    #[test]
    fn single_path_ensemble_matches_direct_simulation() {
        let m = conveyor(1.3);
        let mu0 = |rng: &mut PathRng| HybridState::new(0, vec![rng.gen::<f64>() * 0.99]);
        let cfg = EnsembleConfig {
            n_paths: 1,
            master_seed: 77,
            path: PathConfig::new(3.0, 1e-3).with_stride(100),
        };
        let summary = simulate_ensemble(&m, &mu0, &cfg).unwrap();
        let mut rng = path_rng(77, 0);
        let x0 = mu0(&mut rng);
        let direct = simulate_path(&m, &x0, &cfg.path, &mut rng).unwrap();
        assert_eq!(summary.trajectories[0], direct);
    }

    #[test]
    fn ensemble_is_independent_of_worker_count() {
        let m = ctmc2(1.0);
        let mu0 = |_: &mut PathRng| HybridState::discrete(0);
        let cfg = EnsembleConfig {
            n_paths: 64,
            master_seed: 3,
            path: PathConfig::new(2.0, 1e-2).with_stride(10),
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&m, &mu0, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.trajectories, b.trajectories);
    }

    #[test]
    fn zeno_cap_flags_path() {
        // a jump at every step: rate far above 1 / dt
        let space = StateSpace::new(vec![ModeSpec::discrete(0), ModeSpec::discrete(1)]).unwrap();
        let m = GshsModel::builder(space)
            .rate(scalar_field(|_, _| 1e6), vec![1e6, 1e6])
            .reset(ResetKernel::ModeSwitch {
                n_modes: 2,
                switch: Arc::new(|q, p, _| if q != p { 1.0 } else { 0.0 }),
            })
            .build()
            .unwrap();
        let mut cfg = PathConfig::new(1.0, 0.1);
        cfg.caps.max_jumps = 50;
        let tr = simulate_path(&m, &HybridState::discrete(0), &cfg, &mut path_rng(0, 0)).unwrap();
        assert_eq!(tr.status, PathStatus::ZenoAborted);
        assert!(tr.state(tr.n_samples() - 1).is_none());
    }

    #[test]
    fn escape_is_flagged() {
        let space = StateSpace::new(vec![ModeSpec::continuous(
            0,
            vec![(f64::NEG_INFINITY, f64::INFINITY)],
        )])
        .unwrap();
        let m = GshsModel::builder(space)
            .drift(vector_field(|_, z, out| out[0] = 10.0 * z[0]))
            .reset(ResetKernel::Map(ResetMap::identity()))
            .build()
            .unwrap();
        let mut cfg = PathConfig::new(10.0, 0.01);
        cfg.caps.overflow = 1e6;
        let tr = simulate_path(&m, &HybridState::new(0, vec![1.0]), &cfg, &mut path_rng(0, 0)).unwrap();
        assert_eq!(tr.status, PathStatus::Escaped);
    }

    #[test]
    fn rejects_initial_state_on_guard() {
        let m = conveyor(1.0);
        let cfg = PathConfig::new(1.0, 0.01);
        assert!(simulate_path(&m, &HybridState::new(0, vec![1.0]), &cfg, &mut path_rng(0, 0)).is_err());
    }

    #[test]
    fn expected_jump_counts() {
        let space = StateSpace::new(vec![ModeSpec::continuous(0, vec![(0.0, 1.0)])]).unwrap();
        let still = GshsModel::builder(space)
            .reset(ResetKernel::Map(ResetMap::identity()))
            .build()
            .unwrap();
        let cfg = EnsembleConfig {
            n_paths: 10,
            master_seed: 0,
            path: PathConfig::new(1.0, 0.1),
        };
        let s = simulate_ensemble(&still, &|_: &mut PathRng| HybridState::new(0, vec![0.5]), &cfg).unwrap();
        assert_eq!(expected_jump_count(&s), 0.0);

        let cfg = EnsembleConfig {
            n_paths: 20_000,
            master_seed: 1,
            path: PathConfig::new(3.0, 1e-3).with_stride(1000),
        };
        let s = simulate_ensemble(
            &conveyor(1.0),
            &|rng: &mut PathRng| HybridState::new(0, vec![rng.gen::<f64>()]),
            &cfg,
        )
        .unwrap();
        assert!((expected_jump_count(&s) - 3.0).abs() < 0.02);
        assert!((expected_jump_count_at(&s, 1.0) - 1.0).abs() < 0.02);

        let lambda = 1.5;
        let cfg = EnsembleConfig {
            n_paths: 20_000,
            master_seed: 2,
            path: PathConfig::new(2.0, 1e-3).with_stride(2000),
        };
        let s = simulate_ensemble(&ctmc2(lambda), &|_: &mut PathRng| HybridState::discrete(0), &cfg).unwrap();
        // Poisson(3): standard error sqrt(3 / 20000) ~ 0.012
        assert!((expected_jump_count(&s) - lambda * 2.0).abs() < 0.05);
    }
}
