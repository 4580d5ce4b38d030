//! GSHS description: drift and noise vector fields, jump rate, reset kernel
//! and its dual, plus pointwise evaluation of the generator.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::state_space::{GridField, HybridState, Partition, Side, StateSpace};

/// `f(q, z, out)` writes a vector of length `n_q` into `out`.
pub type VectorField = Arc<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>;
/// `f(q, z)`.
pub type ScalarField = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;
pub type StateMap = Arc<dyn Fn(&HybridState) -> HybridState + Send + Sync>;
pub type InverseBranches = Arc<dyn Fn(&HybridState) -> Vec<HybridState> + Send + Sync>;
pub type StateScalar = Arc<dyn Fn(&HybridState) -> f64 + Send + Sync>;
pub type KernelDensity = Arc<dyn Fn(&HybridState, &HybridState) -> f64 + Send + Sync>;
pub type KernelSampler = Arc<dyn Fn(&HybridState, &mut dyn RngCore) -> HybridState + Send + Sync>;
/// `pi(q, q', z)`: probability of switching from `q` to `q'` at `z`.
pub type SwitchMatrix = Arc<dyn Fn(usize, usize, &[f64]) -> f64 + Send + Sync>;

pub fn vector_field(f: impl Fn(usize, &[f64], &mut [f64]) + Send + Sync + 'static) -> VectorField {
    Arc::new(f)
}

pub fn scalar_field(f: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static) -> ScalarField {
    Arc::new(f)
}

/// Deterministic reset map with the inverse branches and Jacobian
/// determinant needed to build the dual kernel.
#[derive(Clone)]
pub struct ResetMap {
    pub map: StateMap,
    pub inverse: Option<InverseBranches>,
    pub jacobian: Option<StateScalar>,
}

impl ResetMap {
    pub fn new(map: impl Fn(&HybridState) -> HybridState + Send + Sync + 'static) -> Self {
        Self {
            map: Arc::new(map),
            inverse: None,
            jacobian: None,
        }
    }

    pub fn with_inverse(
        mut self,
        inverse: impl Fn(&HybridState) -> Vec<HybridState> + Send + Sync + 'static,
        jacobian: impl Fn(&HybridState) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.inverse = Some(Arc::new(inverse));
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn identity() -> Self {
        Self::new(|x| x.clone()).with_inverse(|x| vec![x.clone()], |_| 1.0)
    }

    pub fn apply(&self, x: &HybridState) -> HybridState {
        (self.map)(x)
    }
}

/// Reset kernel `K(x, dy)`: law of the post-jump state.
#[derive(Clone)]
pub enum ResetKernel {
    Map(ResetMap),
    /// `K(x, .) = sum_k pi_k(x) delta_{Psi_k(x)}`.
    Mixture(Vec<(StateScalar, ResetMap)>),
    /// `K(x, dy) = k(x, y) nu(dy)`. The sampler is optional; without it the
    /// kernel is usable by the grid solvers only.
    Density {
        density: KernelDensity,
        sampler: Option<KernelSampler>,
    },
    /// Switch to `q' != q` with probability `pi(q, q', z)`, keeping `z`.
    ModeSwitch { n_modes: usize, switch: SwitchMatrix },
}

impl fmt::Debug for ResetKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResetKernel::Map(_) => f.write_str("Map"),
            ResetKernel::Mixture(m) => write!(f, "Mixture({})", m.len()),
            ResetKernel::Density { sampler, .. } => {
                write!(f, "Density(sampler: {})", sampler.is_some())
            }
            ResetKernel::ModeSwitch { n_modes, .. } => write!(f, "ModeSwitch({n_modes})"),
        }
    }
}

/// Smooth function on the state space used by the Dynkin and generator
/// checks.
pub trait TestFunction: Send + Sync {
    fn value(&self, x: &HybridState) -> f64;

    /// Gradient and row-major Hessian, when known in closed form.
    fn derivatives(&self, _x: &HybridState) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }

    /// Box containing the support within mode `q`; `None` means the
    /// function may be non-zero anywhere in the mode.
    fn support(&self, _q: usize) -> Option<Vec<(f64, f64)>> {
        None
    }
}

impl<F> TestFunction for F
where
    F: Fn(&HybridState) -> f64 + Send + Sync,
{
    fn value(&self, x: &HybridState) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _x: &HybridState) -> f64 {
        self.0
    }

    fn derivatives(&self, x: &HybridState) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = x.z.len();
        Some((vec![0.0; n], vec![0.0; n * n]))
    }
}

/// Product of per-axis `(1 - u^2)^3` profiles, `u = (z - c) / r`, living on
/// a single mode. The profile is C^2 with compact support.
#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub mode: usize,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub amplitude: f64,
}

impl Bump {
    pub fn new(mode: usize, center: Vec<f64>, radius: Vec<f64>) -> Self {
        Self {
            mode,
            center,
            radius,
            amplitude: 1.0,
        }
    }

    fn profile(&self, axis: usize, z: f64) -> (f64, f64, f64) {
        let r = self.radius[axis];
        let u = (z - self.center[axis]) / r;
        if u.abs() >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let w = 1.0 - u * u;
        (
            w * w * w,
            -6.0 * u * w * w / r,
            (-6.0 * w * w + 24.0 * u * u * w) / (r * r),
        )
    }
}

impl TestFunction for Bump {
    fn value(&self, x: &HybridState) -> f64 {
        if x.q != self.mode {
            return 0.0;
        }
        (0..x.z.len())
            .map(|a| self.profile(a, x.z[a]).0)
            .product::<f64>()
            * self.amplitude
    }

    fn derivatives(&self, x: &HybridState) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = x.z.len();
        if x.q != self.mode {
            return Some((vec![0.0; n], vec![0.0; n * n]));
        }
        let p: Vec<(f64, f64, f64)> = (0..n).map(|a| self.profile(a, x.z[a])).collect();
        let prod_except = |skip: &[usize]| -> f64 {
            (0..n)
                .filter(|a| !skip.contains(a))
                .map(|a| p[a].0)
                .product::<f64>()
        };
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            grad[i] = self.amplitude * p[i].1 * prod_except(&[i]);
            for j in 0..n {
                hess[i * n + j] = if i == j {
                    self.amplitude * p[i].2 * prod_except(&[i])
                } else {
                    self.amplitude * p[i].1 * p[j].1 * prod_except(&[i, j])
                };
            }
        }
        Some((grad, hess))
    }

    fn support(&self, q: usize) -> Option<Vec<(f64, f64)>> {
        if q != self.mode {
            return Some(Vec::new());
        }
        Some(
            self.center
                .iter()
                .zip(&self.radius)
                .map(|(c, r)| (c - r, c + r))
                .collect(),
        )
    }
}

/// Full model. Evaluators are pure functions of the state.
#[derive(Clone)]
pub struct GshsModel {
    space: StateSpace,
    drift: VectorField,
    noise: Vec<VectorField>,
    rate: ScalarField,
    rate_bounds: Vec<f64>,
    reset: ResetKernel,
}

impl fmt::Debug for GshsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GshsModel")
            .field("space", &self.space)
            .field("noise_fields", &self.noise.len())
            .field("rate_bounds", &self.rate_bounds)
            .field("reset", &self.reset)
            .finish()
    }
}

pub struct ModelBuilder {
    space: StateSpace,
    drift: Option<VectorField>,
    noise: Vec<VectorField>,
    rate: Option<(ScalarField, Vec<f64>)>,
    reset: Option<ResetKernel>,
}

impl ModelBuilder {
    pub fn drift(mut self, f: VectorField) -> Self {
        self.drift = Some(f);
        self
    }

    pub fn noise(mut self, f: VectorField) -> Self {
        self.noise.push(f);
        self
    }

    /// Jump rate with a declared per-mode upper bound.
    pub fn rate(mut self, f: ScalarField, bounds: Vec<f64>) -> Self {
        self.rate = Some((f, bounds));
        self
    }

    pub fn reset(mut self, kernel: ResetKernel) -> Self {
        self.reset = Some(kernel);
        self
    }

    pub fn build(self) -> Result<GshsModel> {
        let n_modes = self.space.n_modes();
        let (rate, rate_bounds) = self
            .rate
            .unwrap_or_else(|| (scalar_field(|_, _| 0.0), vec![0.0; n_modes]));
        let model = GshsModel {
            drift: self
                .drift
                .unwrap_or_else(|| vector_field(|_, _, out| out.fill(0.0))),
            noise: self.noise,
            rate,
            rate_bounds,
            reset: self.reset.ok_or_else(|| Error::InvalidModel("missing reset kernel".into()))?,
            space: self.space,
        };
        model.validate()?;
        Ok(model)
    }
}

const VALIDATION_TOL: f64 = 1e-9;

impl GshsModel {
    pub fn builder(space: StateSpace) -> ModelBuilder {
        ModelBuilder {
            space,
            drift: None,
            noise: Vec::new(),
            rate: None,
            reset: None,
        }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn reset_kernel(&self) -> &ResetKernel {
        &self.reset
    }

    pub fn n_noise(&self) -> usize {
        self.noise.len()
    }

    pub fn drift_into(&self, q: usize, z: &[f64], out: &mut [f64]) {
        if !z.is_empty() {
            (self.drift)(q, z, out);
        }
    }

    pub fn drift(&self, x: &HybridState) -> Vec<f64> {
        let mut out = vec![0.0; x.z.len()];
        self.drift_into(x.q, &x.z, &mut out);
        out
    }

    pub fn noise_into(&self, l: usize, q: usize, z: &[f64], out: &mut [f64]) {
        if !z.is_empty() {
            (self.noise[l])(q, z, out);
        }
    }

    pub fn rate(&self, q: usize, z: &[f64]) -> f64 {
        (self.rate)(q, z)
    }

    pub fn rate_bound(&self, q: usize) -> f64 {
        self.rate_bounds[q]
    }

    pub fn max_rate_bound(&self) -> f64 {
        self.rate_bounds.iter().cloned().fold(0.0, f64::max)
    }

    pub fn in_guard(&self, x: &HybridState, tol: f64) -> bool {
        self.space.in_guard(x, tol)
    }

    pub fn has_guard(&self) -> bool {
        self.space.modes().iter().any(|m| !m.guard_faces.is_empty())
    }

    /// `a(x) = sum_l f_l(x) f_l(x)^T`; empty on discrete modes.
    pub fn diffusion_matrix(&self, x: &HybridState) -> DMatrix<f64> {
        let n = x.z.len();
        let mut a = DMatrix::zeros(n, n);
        let mut f = vec![0.0; n];
        for l in 0..self.noise.len() {
            self.noise_into(l, x.q, &x.z, &mut f);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] += f[i] * f[j];
                }
            }
        }
        a
    }

    /// `(L phi)(x) = f0 . grad phi + 1/2 a : hess phi`, using closed-form
    /// derivatives when the test function provides them and centred finite
    /// differences otherwise.
    pub fn generator_apply(&self, phi: &dyn TestFunction, x: &HybridState) -> f64 {
        if x.z.is_empty() {
            return 0.0;
        }
        match phi.derivatives(x) {
            Some((grad, hess)) => self.generator_from_derivatives(x, &grad, &hess),
            None => self.generator_apply_fd(phi, x, 1e-4),
        }
    }

    /// Finite-difference generator with step `rel_step * axis scale`, the
    /// scale being the box width on bounded axes and 1 otherwise.
    pub fn generator_apply_fd(&self, phi: &dyn TestFunction, x: &HybridState, rel_step: f64) -> f64 {
        let n = x.z.len();
        if n == 0 {
            return 0.0;
        }
        let mode = &self.space.modes()[x.q];
        let h: Vec<f64> = mode
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                let w = hi - lo;
                rel_step * if w.is_finite() { w } else { 1.0 }
            })
            .collect();
        let eval = |shift: &[(usize, f64)]| {
            let mut y = x.clone();
            for &(a, d) in shift {
                y.z[a] += d;
            }
            phi.value(&y)
        };
        let f0 = phi.value(x);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            let plus = eval(&[(i, h[i])]);
            let minus = eval(&[(i, -h[i])]);
            grad[i] = (plus - minus) / (2.0 * h[i]);
            hess[i * n + i] = (plus - 2.0 * f0 + minus) / (h[i] * h[i]);
            for j in 0..i {
                let v = (eval(&[(i, h[i]), (j, h[j])]) - eval(&[(i, h[i]), (j, -h[j])])
                    - eval(&[(i, -h[i]), (j, h[j])])
                    + eval(&[(i, -h[i]), (j, -h[j])]))
                    / (4.0 * h[i] * h[j]);
                hess[i * n + j] = v;
                hess[j * n + i] = v;
            }
        }
        self.generator_from_derivatives(x, &grad, &hess)
    }

    fn generator_from_derivatives(&self, x: &HybridState, grad: &[f64], hess: &[f64]) -> f64 {
        let n = x.z.len();
        let f0 = self.drift(x);
        let a = self.diffusion_matrix(x);
        let mut out = 0.0;
        for i in 0..n {
            out += f0[i] * grad[i];
            for j in 0..n {
                out += 0.5 * a[(i, j)] * hess[i * n + j];
            }
        }
        out
    }

    /// Draw a post-jump state from `K(x, .)`.
    pub fn reset_sample<R: RngCore>(&self, x: &HybridState, rng: &mut R) -> Result<HybridState> {
        match &self.reset {
            ResetKernel::Map(m) => Ok(m.apply(x)),
            ResetKernel::Mixture(maps) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (w, m) in maps {
                    acc += w(x);
                    if u < acc {
                        return Ok(m.apply(x));
                    }
                }
                // weights sum to one up to rounding
                Ok(maps.last().expect("validated non-empty").1.apply(x))
            }
            ResetKernel::Density { sampler, .. } => match sampler {
                Some(s) => Ok(s(x, rng)),
                None => Err(Error::Unsupported(
                    "density reset kernel without a sampler".into(),
                )),
            },
            ResetKernel::ModeSwitch { n_modes, switch } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut last = x.q;
                for q in (0..*n_modes).filter(|&q| q != x.q) {
                    let p = switch(x.q, q, &x.z);
                    if p > 0.0 {
                        last = q;
                    }
                    acc += p;
                    if u < acc {
                        return Ok(HybridState::new(q, x.z.clone()));
                    }
                }
                Ok(HybridState::new(last, x.z.clone()))
            }
        }
    }

    /// `(K phi)(x)`. Density kernels are integrated by midpoint quadrature on
    /// `partition`.
    pub fn kernel_apply(
        &self,
        phi: &dyn TestFunction,
        x: &HybridState,
        partition: Option<&Partition>,
    ) -> Result<f64> {
        match &self.reset {
            ResetKernel::Map(m) => Ok(phi.value(&m.apply(x))),
            ResetKernel::Mixture(maps) => Ok(maps
                .iter()
                .map(|(w, m)| w(x) * phi.value(&m.apply(x)))
                .sum()),
            ResetKernel::Density { density, .. } => {
                let part = partition.ok_or_else(|| {
                    Error::Unsupported("density kernel needs a partition for quadrature".into())
                })?;
                Ok((0..part.n_cells())
                    .map(|c| {
                        let y = part.center(c);
                        density(x, &y) * phi.value(&y) * part.cell_volume(c)
                    })
                    .sum())
            }
            ResetKernel::ModeSwitch { n_modes, switch } => Ok((0..*n_modes)
                .filter(|&q| q != x.q)
                .map(|q| switch(x.q, q, &x.z) * phi.value(&HybridState::new(q, x.z.clone())))
                .sum()),
        }
    }

    /// Dual kernel applied to a grid field: `(K* g)(x)`.
    pub fn dual_apply(&self, g: &GridField<'_>, x: &HybridState) -> Result<f64> {
        Ok(self
            .dual_weights(g.partition, x)?
            .into_iter()
            .map(|(c, w)| w * g.values[c])
            .sum())
    }

    /// Cell weights `w` with `(K* g)(x) = sum_c w_c g_c` for any grid field
    /// `g` on `partition`.
    pub fn dual_weights(&self, partition: &Partition, x: &HybridState) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        let mut branch_sum = |w: Option<&StateScalar>, m: &ResetMap| -> Result<()> {
            let (Some(inv), Some(jac)) = (&m.inverse, &m.jacobian) else {
                return Err(Error::Unsupported(
                    "reset map without declared inverse branches".into(),
                ));
            };
            for y in inv(x) {
                let weight = w.map_or(1.0, |w| w(&y)) / jac(&y).abs();
                out.extend(
                    partition
                        .interpolation_weights(&y)
                        .into_iter()
                        .map(|(c, v)| (c, weight * v)),
                );
            }
            Ok(())
        };
        match &self.reset {
            ResetKernel::Map(m) => branch_sum(None, m)?,
            ResetKernel::Mixture(maps) => {
                for (w, m) in maps {
                    branch_sum(Some(w), m)?;
                }
            }
            ResetKernel::Density { density, .. } => {
                out.extend((0..partition.n_cells()).map(|c| {
                    (c, density(&partition.center(c), x) * partition.cell_volume(c))
                }));
            }
            ResetKernel::ModeSwitch { n_modes, switch } => {
                for q in (0..*n_modes).filter(|&q| q != x.q) {
                    let w = switch(q, x.q, &x.z);
                    out.extend(
                        partition
                            .interpolation_weights(&HybridState::new(q, x.z.clone()))
                            .into_iter()
                            .map(|(c, v)| (c, w * v)),
                    );
                }
            }
        }
        Ok(out)
    }

    /// Deterministic lattice of sample points per mode; unbounded axes are
    /// sampled on a window of width 10 next to the finite bound (or around
    /// the origin).
    pub fn sample_points(&self, per_axis: usize) -> Vec<HybridState> {
        let mut pts = Vec::new();
        for mode in self.space.modes() {
            if mode.is_discrete() {
                pts.push(HybridState::discrete(mode.id));
                continue;
            }
            let axes: Vec<Vec<f64>> = mode
                .bounds
                .iter()
                .map(|&b| {
                    let (lo, hi) = sampling_window(b);
                    (0..per_axis)
                        .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / per_axis as f64)
                        .collect()
                })
                .collect();
            let total: usize = axes.iter().map(Vec::len).product();
            for mut k in 0..total {
                let mut z = vec![0.0; axes.len()];
                for a in (0..axes.len()).rev() {
                    z[a] = axes[a][k % axes[a].len()];
                    k /= axes[a].len();
                }
                pts.push(HybridState::new(mode.id, z));
            }
        }
        pts
    }

    fn validate(&self) -> Result<()> {
        let n_modes = self.space.n_modes();
        if self.rate_bounds.len() != n_modes || self.rate_bounds.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::InvalidModel(
                "rate bounds must be given per mode and be non-negative".into(),
            ));
        }
        match &self.reset {
            ResetKernel::Mixture(maps) if maps.is_empty() => {
                return Err(Error::InvalidModel("empty reset mixture".into()));
            }
            ResetKernel::ModeSwitch { n_modes: k, .. } => {
                if *k != n_modes {
                    return Err(Error::InvalidModel(format!(
                        "mode switch over {k} modes in a {n_modes}-mode space"
                    )));
                }
                let dims: Vec<usize> = self.space.modes().iter().map(|m| m.dim()).collect();
                if dims.iter().any(|&d| d != dims[0]) {
                    return Err(Error::InvalidModel(
                        "mode switching needs equal dimensions in every mode".into(),
                    ));
                }
            }
            _ => {}
        }
        let guard = self.guard_points(7);
        let mut pts = self.sample_points(7);
        let n_interior = pts.len();
        pts.extend(guard);
        for (i, x) in pts.iter().enumerate() {
            let lam = self.rate(x.q, &x.z);
            if !(lam >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "negative jump rate {lam} at {x:?}"
                )));
            }
            if lam > self.rate_bounds[x.q] * (1.0 + 1e-12) {
                return Err(Error::RateBoundExceeded {
                    mode: x.q,
                    rate: lam,
                    bound: self.rate_bounds[x.q],
                });
            }
            if self.drift(x).iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("non-finite drift at {x:?}")));
            }
            // the kernel only matters where a jump can start
            if i >= n_interior || self.rate_bounds[x.q] > 0.0 {
                self.validate_kernel_at(x)?;
            }
        }
        self.validate_boundary_noise()
    }

    fn guard_points(&self, per_axis: usize) -> Vec<HybridState> {
        let mut pts = Vec::new();
        for mode in self.space.modes() {
            for face in &mode.guard_faces {
                let coord = mode.face_coord(face.axis, face.side);
                for mut x in self.sample_points(per_axis).into_iter().filter(|x| x.q == mode.id) {
                    x.z[face.axis] = coord;
                    for &(a, lo, hi) in &face.restrict {
                        x.z[a] = x.z[a].clamp(lo, hi);
                    }
                    if self.space.in_guard(&x, 0.0) {
                        pts.push(x);
                    }
                }
            }
        }
        pts
    }

    fn validate_kernel_at(&self, x: &HybridState) -> Result<()> {
        let check_target = |y: &HybridState| -> Result<()> {
            self.space.check_state(y).map_err(|e| {
                Error::InvalidModel(format!("reset from {x:?} leaves the state space: {e}"))
            })?;
            if self.space.in_guard(y, VALIDATION_TOL) {
                return Err(Error::InvalidModel(format!(
                    "reset from {x:?} lands in the guard at {y:?}"
                )));
            }
            Ok(())
        };
        match &self.reset {
            ResetKernel::Map(m) => check_target(&m.apply(x)),
            ResetKernel::Mixture(maps) => {
                let mut total = 0.0;
                for (w, m) in maps {
                    let p = w(x);
                    if !(p >= 0.0) {
                        return Err(Error::InvalidModel(format!(
                            "negative mixture weight at {x:?}"
                        )));
                    }
                    total += p;
                    if p > 0.0 {
                        check_target(&m.apply(x))?;
                    }
                }
                if (total - 1.0).abs() > VALIDATION_TOL {
                    return Err(Error::InvalidModel(format!(
                        "mixture weights sum to {total} at {x:?}"
                    )));
                }
                Ok(())
            }
            ResetKernel::Density { .. } => Ok(()),
            ResetKernel::ModeSwitch { n_modes, switch } => {
                if switch(x.q, x.q, &x.z) != 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "mode switch matrix has a non-zero diagonal at {x:?}"
                    )));
                }
                let mut total = 0.0;
                for q in (0..*n_modes).filter(|&q| q != x.q) {
                    let p = switch(x.q, q, &x.z);
                    if !(p >= 0.0) {
                        return Err(Error::InvalidModel(format!(
                            "negative switch probability at {x:?}"
                        )));
                    }
                    total += p;
                    if p > 0.0 {
                        check_target(&HybridState::new(q, x.z.clone()))?;
                    }
                }
                // rows of modes that never jump may be left empty
                if (total - 1.0).abs() > VALIDATION_TOL
                    && !(total == 0.0 && self.rate_bounds[x.q] == 0.0)
                {
                    return Err(Error::InvalidModel(format!(
                        "switch probabilities sum to {total} at {x:?}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Clamping at non-guard faces only makes sense when the noise has no
    /// component normal to the face.
    fn validate_boundary_noise(&self) -> Result<()> {
        for mode in self.space.modes() {
            for (axis, &(lo, hi)) in mode.bounds.iter().enumerate() {
                for (side, coord) in [(Side::Lower, lo), (Side::Upper, hi)] {
                    if !coord.is_finite()
                        || mode
                            .guard_faces
                            .iter()
                            .any(|f| f.axis == axis && f.side == side && f.restrict.is_empty())
                    {
                        continue;
                    }
                    for mut x in self.sample_points(7).into_iter().filter(|x| x.q == mode.id) {
                        x.z[axis] = coord;
                        if self.space.in_guard(&x, 0.0) {
                            continue;
                        }
                        let a = self.diffusion_matrix(&x);
                        if a[(axis, axis)] > 1e-12 {
                            return Err(Error::InvalidModel(format!(
                                "noise is not tangent to the non-guard face z[{axis}] = {coord} of mode {}",
                                mode.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn sampling_window((lo, hi): (f64, f64)) -> (f64, f64) {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => (lo, hi),
        (true, false) => (lo, lo + 10.0),
        (false, true) => (hi - 10.0, hi),
        (false, false) => (-5.0, 5.0),
    }
}
