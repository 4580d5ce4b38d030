//! Built-in scenarios: parameterized models with an initial law, a default
//! grid and default run resolution.
//!
//! Every numeric parameter lives in a flat table addressed by a dotted path
//! (`model.v`, `mu0.std`, `grid.cells`, `run.dt`, ...). Overrides replace
//! entries of that table; `mu0.kind` additionally selects the family of the
//! initial law.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpk::GridDensity;
use crate::model::{scalar_field, vector_field, GshsModel, ResetKernel, ResetMap};
use crate::simulator::{InitialSampler, PathRng};
use crate::state_space::{GridSpec, GuardFace, HybridState, ModeSpec, Partition, Side, StateSpace};

pub const CATALOG: [&str; 7] = [
    "conveyor",
    "ctmc2",
    "ctmc-n",
    "pure-jump-continuous",
    "switching-ou",
    "hespanha-halving",
    "thermostat-1d",
];

/// Override value: numbers for parameters, text for `mu0.kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl ParamValue {
    /// Numbers when they parse, text otherwise.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<f64>() {
            Ok(v) => ParamValue::Number(v),
            Err(_) => ParamValue::Text(s.trim().to_string()),
        }
    }
}

pub type Overrides = BTreeMap<String, ParamValue>;

/// Initial probability law on the hybrid state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Delta { state: HybridState },
    /// Uniform on a box inside one mode.
    Uniform { mode: usize, lower: Vec<f64>, upper: Vec<f64> },
    /// Independent normal coordinates inside one mode.
    Gaussian { mode: usize, mean: Vec<f64>, std: Vec<f64> },
    /// Weighted combination; weights sum to one.
    Mixture { components: Vec<(f64, InitialLaw)> },
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

impl InitialLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HybridState {
        match self {
            InitialLaw::Delta { state } => state.clone(),
            InitialLaw::Uniform { mode, lower, upper } => HybridState::new(
                *mode,
                lower
                    .iter()
                    .zip(upper)
                    .map(|(&a, &b)| a + (b - a) * rng.gen::<f64>())
                    .collect(),
            ),
            InitialLaw::Gaussian { mode, mean, std } => HybridState::new(
                *mode,
                mean.iter()
                    .zip(std)
                    .map(|(&m, &s)| {
                        let n: f64 = StandardNormal.sample(rng);
                        m + s * n
                    })
                    .collect(),
            ),
            InitialLaw::Mixture { components } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (w, law) in components {
                    acc += w;
                    if u < acc {
                        return law.sample(rng);
                    }
                }
                components[components.len() - 1].1.sample(rng)
            }
        }
    }

    /// Checks the law against the state space, including `mu0(G) = 0`.
    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        let bad = |path: &str, message: String| {
            Err(Error::InvalidParameter {
                path: path.to_string(),
                message,
            })
        };
        match self {
            InitialLaw::Delta { state } => {
                if let Err(e) = space.check_state(state) {
                    return bad("mu0.at", e.to_string());
                }
                if space.in_guard(state, 1e-12) {
                    return bad("mu0.at", "initial law puts mass on the guard".into());
                }
            }
            InitialLaw::Uniform { mode, lower, upper } => {
                let Ok(spec) = space.mode(*mode) else {
                    return bad("mu0.mode", format!("no mode {mode}"));
                };
                if lower.len() != spec.dim() || upper.len() != spec.dim() || spec.is_discrete() {
                    return bad("mu0.lower", "box dimension does not match the mode".into());
                }
                for (axis, (&(lo, hi), (&a, &b))) in spec.bounds.iter().zip(lower.iter().zip(upper)).enumerate() {
                    if !(a < b) {
                        return bad("mu0.upper", format!("axis {axis}: upper {b} not above lower {a}"));
                    }
                    if a < lo || b > hi {
                        return bad(
                            "mu0.lower",
                            format!("axis {axis}: box [{a}, {b}] leaves the mode domain [{lo}, {hi}]"),
                        );
                    }
                }
            }
            InitialLaw::Gaussian { mode, mean, std } => {
                let Ok(spec) = space.mode(*mode) else {
                    return bad("mu0.mode", format!("no mode {mode}"));
                };
                if mean.len() != spec.dim() || std.len() != spec.dim() || spec.is_discrete() {
                    return bad("mu0.mean", "dimension does not match the mode".into());
                }
                for (axis, &(lo, hi)) in spec.bounds.iter().enumerate() {
                    if !(std[axis] > 0.0) {
                        return bad("mu0.std", format!("axis {axis}: must be positive"));
                    }
                    if lo.is_finite() || hi.is_finite() {
                        return bad(
                            "mu0.kind",
                            format!("gaussian law needs an unbounded axis, axis {axis} is bounded"),
                        );
                    }
                }
            }
            InitialLaw::Mixture { components } => {
                if components.is_empty() || components.iter().any(|(w, _)| !(*w >= 0.0)) {
                    return bad("mu0.components", "weights must be non-negative".into());
                }
                let total: f64 = components.iter().map(|(w, _)| w).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad("mu0.components", format!("weights sum to {total}"));
                }
                for (_, law) in components {
                    law.validate(space)?;
                }
            }
        }
        Ok(())
    }

    /// Probability of each cell; mass outside the truncation is dropped.
    pub fn cell_masses(&self, partition: &Partition) -> Result<Vec<f64>> {
        let mut out = vec![0.0; partition.n_cells()];
        self.add_masses(partition, 1.0, &mut out)?;
        Ok(out)
    }

    fn add_masses(&self, partition: &Partition, weight: f64, out: &mut [f64]) -> Result<()> {
        match self {
            InitialLaw::Delta { state } => out[partition.locate(state)?] += weight,
            InitialLaw::Uniform { mode, lower, upper } => {
                for c in partition.mode_range(*mode) {
                    let frac: f64 = partition
                        .cell_bounds(c)
                        .iter()
                        .enumerate()
                        .map(|(axis, &(a, b))| {
                            (b.min(upper[axis]) - a.max(lower[axis])).max(0.0) / (upper[axis] - lower[axis])
                        })
                        .product();
                    out[c] += weight * frac;
                }
            }
            InitialLaw::Gaussian { mode, mean, std } => {
                for c in partition.mode_range(*mode) {
                    let p: f64 = partition
                        .cell_bounds(c)
                        .iter()
                        .enumerate()
                        .map(|(axis, &(a, b))| {
                            normal_cdf((b - mean[axis]) / std[axis]) - normal_cdf((a - mean[axis]) / std[axis])
                        })
                        .product();
                    out[c] += weight * p;
                }
            }
            InitialLaw::Mixture { components } => {
                for (w, law) in components {
                    law.add_masses(partition, weight * w, out)?;
                }
            }
        }
        Ok(())
    }

    pub fn density(&self, partition: &Partition) -> Result<GridDensity> {
        GridDensity::from_masses(partition.clone(), &self.cell_masses(partition)?, 0.0)
    }
}

impl InitialSampler for InitialLaw {
    fn sample(&self, rng: &mut PathRng) -> HybridState {
        InitialLaw::sample(self, rng)
    }
}

/// Closed-form data behind each catalog entry.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    Conveyor { v: f64 },
    /// `rates[(i, j)]` is the rate from `i` to `j`.
    Chain { rates: DMatrix<f64> },
    PureJump { rate: f64, kernel_std: f64 },
    SwitchingOu { means: [f64; 2], sigma: f64, rates: [f64; 2] },
    Halving { rate: f64, sigma: f64 },
    Thermostat { z_min: f64, z_max: f64, v: f64, sigma: f64 },
}

/// Grid solver able to handle a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Master,
    Spontaneous,
    Switching,
    Thermostat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunDefaults {
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Width of the time bins for jump intensities, also the sampling and
    /// snapshot interval.
    pub bin_width: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub model: GshsModel,
    pub initial: InitialLaw,
    pub grid: Vec<GridSpec>,
    pub defaults: RunDefaults,
    pub kind: ScenarioKind,
}

impl Scenario {
    pub fn partition(&self) -> Result<Partition> {
        Partition::new(self.model.space(), self.grid.clone())
    }

    pub fn solver(&self) -> Option<SolverKind> {
        match self.kind {
            ScenarioKind::Conveyor { .. } => None,
            ScenarioKind::Chain { .. } | ScenarioKind::PureJump { .. } => Some(SolverKind::Master),
            ScenarioKind::SwitchingOu { .. } => Some(SolverKind::Switching),
            ScenarioKind::Halving { .. } => Some(SolverKind::Spontaneous),
            ScenarioKind::Thermostat { .. } => Some(SolverKind::Thermostat),
        }
    }

    pub fn initial_density(&self, partition: &Partition) -> Result<GridDensity> {
        self.initial.density(partition)
    }
}

struct Table {
    scenario: &'static str,
    values: BTreeMap<String, f64>,
    mu0_kind: String,
}

impl Table {
    fn new(scenario: &'static str, mu0_kind: &str, entries: &[(&str, f64)]) -> Self {
        let mut values: BTreeMap<String, f64> = [
            ("run.n_paths", 100_000.0),
            ("run.dt", 1e-3),
            ("run.t_end", 2.0),
            ("run.bin_width", 0.1),
        ]
        .iter()
        .map(|&(k, v)| (k.to_string(), v))
        .collect();
        values.extend(entries.iter().map(|&(k, v)| (k.to_string(), v)));
        Self {
            scenario,
            values,
            mu0_kind: mu0_kind.to_string(),
        }
    }

    fn apply(&mut self, overrides: &Overrides) -> Result<()> {
        for (key, value) in overrides {
            match (key.as_str(), value) {
                ("mu0.kind", ParamValue::Text(kind)) => self.mu0_kind = kind.clone(),
                (_, ParamValue::Number(v)) if self.values.contains_key(key) => {
                    if !v.is_finite() {
                        return Err(invalid(key, "must be finite"));
                    }
                    self.values.insert(key.clone(), *v);
                }
                (_, ParamValue::Text(t)) if self.values.contains_key(key) => {
                    return Err(invalid(key, &format!("expected a number, got {t:?}")));
                }
                _ => {
                    return Err(invalid(
                        key,
                        &format!("not a parameter of scenario {}", self.scenario),
                    ))
                }
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> f64 {
        self.values[key]
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v = self.get(key);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(invalid(key, &format!("must be positive, got {v}")))
        }
    }

    fn non_negative(&self, key: &str) -> Result<f64> {
        let v = self.get(key);
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(invalid(key, &format!("must be non-negative, got {v}")))
        }
    }

    fn count(&self, key: &str, min: usize) -> Result<usize> {
        let v = self.get(key);
        if v.fract() != 0.0 || v < min as f64 || v > u32::MAX as f64 {
            return Err(invalid(key, &format!("must be an integer of at least {min}, got {v}")));
        }
        Ok(v as usize)
    }

    fn defaults(&self) -> Result<RunDefaults> {
        let d = RunDefaults {
            n_paths: self.count("run.n_paths", 1)?,
            dt: self.positive("run.dt")?,
            t_end: self.positive("run.t_end")?,
            bin_width: self.positive("run.bin_width")?,
        };
        if d.dt > d.bin_width {
            return Err(invalid("run.dt", "must not exceed run.bin_width"));
        }
        let ratio = d.t_end / d.bin_width;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(invalid("run.t_end", "must be a multiple of run.bin_width"));
        }
        Ok(d)
    }

    /// Initial law in mode `mode` of a one-dimensional or discrete space.
    fn initial(&self, space: &StateSpace) -> Result<InitialLaw> {
        let mode = self.count("mu0.mode", 0)?;
        let discrete = space
            .mode(mode)
            .map_err(|_| invalid("mu0.mode", &format!("no mode {mode}")))?
            .is_discrete();
        if discrete && self.mu0_kind != "delta" {
            return Err(invalid("mu0.kind", "discrete modes only take a delta initial law"));
        }
        if !discrete && !self.values.contains_key("mu0.at") {
            return Err(invalid("mu0.mode", "this scenario has no continuous initial law"));
        }
        let law = match self.mu0_kind.as_str() {
            "delta" if discrete => InitialLaw::Delta {
                state: HybridState::discrete(mode),
            },
            "delta" => InitialLaw::Delta {
                state: HybridState::new(mode, vec![self.get("mu0.at")]),
            },
            "uniform" => InitialLaw::Uniform {
                mode,
                lower: vec![self.get("mu0.lower")],
                upper: vec![self.get("mu0.upper")],
            },
            "gaussian" => InitialLaw::Gaussian {
                mode,
                mean: vec![self.get("mu0.mean")],
                std: vec![self.get("mu0.std")],
            },
            other => {
                return Err(invalid(
                    "mu0.kind",
                    &format!("unknown initial law {other:?}; expected delta, uniform or gaussian"),
                ))
            }
        };
        law.validate(space)?;
        Ok(law)
    }

    fn finish(self) -> BTreeMap<String, f64> {
        self.values
    }
}

fn invalid(path: &str, message: &str) -> Error {
    Error::InvalidParameter {
        path: path.to_string(),
        message: message.to_string(),
    }
}

const CONTINUOUS_MU0: [(&str, f64); 6] = [
    ("mu0.mode", 0.0),
    ("mu0.at", 0.0),
    ("mu0.lower", -0.5),
    ("mu0.upper", 0.5),
    ("mu0.mean", 0.0),
    ("mu0.std", 1.0),
];

fn table(name: &str) -> Result<Table> {
    let mu0 = |overrides: &[(&'static str, f64)]| {
        let mut v: Vec<(&str, f64)> = CONTINUOUS_MU0.to_vec();
        v.extend_from_slice(overrides);
        v
    };
    let t = match name {
        "conveyor" => Table::new(
            "conveyor",
            "uniform",
            &[
                mu0(&[("mu0.lower", 0.0), ("mu0.upper", 1.0)]),
                vec![("model.v", 1.0), ("grid.cells", 100.0), ("run.t_end", 5.0)],
            ]
            .concat(),
        ),
        "ctmc2" => Table::new(
            "ctmc2",
            "delta",
            &[
                ("mu0.mode", 0.0),
                ("model.rate_01", 1.0),
                ("model.rate_10", 1.0),
            ],
        ),
        "ctmc-n" => Table::new(
            "ctmc-n",
            "delta",
            &[
                ("mu0.mode", 0.0),
                ("model.n", 5.0),
                ("model.rate_seed", 7.0),
                ("model.rate_min", 0.5),
                ("model.rate_max", 2.0),
            ],
        ),
        "pure-jump-continuous" => Table::new(
            "pure-jump-continuous",
            "gaussian",
            &[
                mu0(&[]),
                vec![
                    ("model.rate", 1.0),
                    ("model.kernel_std", 0.5),
                    ("grid.lower", -10.0),
                    ("grid.upper", 10.0),
                    ("grid.cells", 200.0),
                ],
            ]
            .concat(),
        ),
        "switching-ou" => Table::new(
            "switching-ou",
            "gaussian",
            &[
                mu0(&[("mu0.std", 0.5)]),
                vec![
                    ("model.m0", -1.0),
                    ("model.m1", 1.0),
                    ("model.sigma", 1.0),
                    ("model.rate_01", 1.0),
                    ("model.rate_10", 1.0),
                    ("grid.lower", -6.0),
                    ("grid.upper", 6.0),
                    ("grid.cells", 240.0),
                ],
            ]
            .concat(),
        ),
        "hespanha-halving" => Table::new(
            "hespanha-halving",
            "gaussian",
            &[
                mu0(&[]),
                vec![
                    ("model.rate", 1.0),
                    ("model.sigma", 1.0),
                    ("grid.lower", -8.0),
                    ("grid.upper", 8.0),
                    ("grid.cells", 320.0),
                ],
            ]
            .concat(),
        ),
        "thermostat-1d" => Table::new(
            "thermostat-1d",
            "uniform",
            &[
                mu0(&[]),
                vec![
                    ("model.z_min", -1.0),
                    ("model.z_max", 1.0),
                    ("model.v", 1.0),
                    ("model.sigma", 0.5),
                    ("grid.margin", 2.0),
                    ("grid.cells", 160.0),
                    ("run.t_end", 5.0),
                    ("run.bin_width", 0.25),
                    ("run.dt", 5e-4),
                ],
            ]
            .concat(),
        ),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(t)
}

/// Default parameter table of a catalog entry.
pub fn parameters(name: &str) -> Result<BTreeMap<String, f64>> {
    Ok(table(name)?.finish())
}

/// Builds and validates a catalog entry with `overrides` applied.
pub fn build(name: &str, overrides: &Overrides) -> Result<Scenario> {
    let mut t = table(name)?;
    t.apply(overrides)?;
    let defaults = t.defaults()?;
    let (model, grid, kind) = match name {
        "conveyor" => conveyor(&t)?,
        "ctmc2" => {
            let mut rates = DMatrix::zeros(2, 2);
            rates[(0, 1)] = t.positive("model.rate_01")?;
            rates[(1, 0)] = t.positive("model.rate_10")?;
            chain(rates)?
        }
        "ctmc-n" => {
            let n = t.count("model.n", 2)?;
            let seed = t.count("model.rate_seed", 0)? as u64;
            let lo = t.positive("model.rate_min")?;
            let hi = t.positive("model.rate_max")?;
            if hi < lo {
                return Err(invalid("model.rate_max", "must not be below model.rate_min"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rates = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        rates[(i, j)] = lo + (hi - lo) * rng.gen::<f64>();
                    }
                }
            }
            chain(rates)?
        }
        "pure-jump-continuous" => pure_jump(&t)?,
        "switching-ou" => switching_ou(&t)?,
        "hespanha-halving" => halving(&t)?,
        "thermostat-1d" => thermostat(&t)?,
        _ => unreachable!(),
    };
    let initial = t.initial(model.space())?;
    Partition::new(model.space(), grid.clone())
        .map_err(|e| invalid("grid.cells", &e.to_string()))?;
    Ok(Scenario {
        name: name.to_string(),
        params: t.finish(),
        model,
        initial,
        grid,
        defaults,
        kind,
    })
}

type Parts = (GshsModel, Vec<GridSpec>, ScenarioKind);

fn line_grid(t: &Table) -> Result<GridSpec> {
    let lo = t.get("grid.lower");
    let hi = t.get("grid.upper");
    if !(lo < hi) {
        return Err(invalid("grid.upper", "must be above grid.lower"));
    }
    Ok(GridSpec::truncated(vec![t.count("grid.cells", 2)?], vec![(lo, hi)]))
}

fn conveyor(t: &Table) -> Result<Parts> {
    let v = t.positive("model.v")?;
    let space = StateSpace::new(vec![
        ModeSpec::continuous(0, vec![(0.0, 1.0)]).with_guard(GuardFace::new(0, Side::Upper))
    ])?;
    let model = GshsModel::builder(space)
        .drift(vector_field(move |_, _, out| out[0] = v))
        .reset(ResetKernel::Map(ResetMap::new(|x| HybridState::new(x.q, vec![0.0]))))
        .build()?;
    let grid = vec![GridSpec::uniform(vec![t.count("grid.cells", 1)?])];
    Ok((model, grid, ScenarioKind::Conveyor { v }))
}

fn chain(rates: DMatrix<f64>) -> Result<Parts> {
    let n = rates.nrows();
    let space = StateSpace::new((0..n).map(ModeSpec::discrete).collect())?;
    let exit: Vec<f64> = (0..n).map(|i| rates.row(i).sum()).collect();
    let r = rates.clone();
    let e = exit.clone();
    let model = GshsModel::builder(space)
        .rate(scalar_field(move |q, _| e[q]), exit.clone())
        .reset(ResetKernel::ModeSwitch {
            n_modes: n,
            switch: Arc::new(move |q, p, _| if q == p { 0.0 } else { r[(q, p)] / exit[q] }),
        })
        .build()?;
    Ok((model, vec![GridSpec::atom(); n], ScenarioKind::Chain { rates }))
}

fn pure_jump(t: &Table) -> Result<Parts> {
    let rate = t.positive("model.rate")?;
    let s = t.positive("model.kernel_std")?;
    let space = StateSpace::new(vec![ModeSpec::continuous(0, vec![(f64::NEG_INFINITY, f64::INFINITY)])])?;
    let norm = 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt());
    let model = GshsModel::builder(space)
        .rate(scalar_field(move |_, _| rate), vec![rate])
        .reset(ResetKernel::Density {
            density: Arc::new(move |x, y| {
                let d = (y.z[0] - x.z[0]) / s;
                norm * (-0.5 * d * d).exp()
            }),
            sampler: Some(Arc::new(move |x, rng| {
                let n: f64 = StandardNormal.sample(rng);
                HybridState::new(x.q, vec![x.z[0] + s * n])
            })),
        })
        .build()?;
    Ok((model, vec![line_grid(t)?], ScenarioKind::PureJump { rate, kernel_std: s }))
}

fn switching_ou(t: &Table) -> Result<Parts> {
    let means = [t.get("model.m0"), t.get("model.m1")];
    let sigma = t.positive("model.sigma")?;
    let rates = [t.positive("model.rate_01")?, t.positive("model.rate_10")?];
    let line = (f64::NEG_INFINITY, f64::INFINITY);
    let space = StateSpace::new(vec![
        ModeSpec::continuous(0, vec![line]),
        ModeSpec::continuous(1, vec![line]),
    ])?;
    let model = GshsModel::builder(space)
        .drift(vector_field(move |q, z, out| out[0] = -(z[0] - means[q])))
        .noise(vector_field(move |_, _, out| out[0] = sigma))
        .rate(scalar_field(move |q, _| rates[q]), rates.to_vec())
        .reset(ResetKernel::ModeSwitch {
            n_modes: 2,
            switch: Arc::new(|q, p, _| if q != p { 1.0 } else { 0.0 }),
        })
        .build()?;
    let g = line_grid(t)?;
    Ok((
        model,
        vec![g.clone(), g],
        ScenarioKind::SwitchingOu { means, sigma, rates },
    ))
}

fn halving(t: &Table) -> Result<Parts> {
    let rate = t.positive("model.rate")?;
    let sigma = t.non_negative("model.sigma")?;
    let space = StateSpace::new(vec![ModeSpec::continuous(0, vec![(f64::NEG_INFINITY, f64::INFINITY)])])?;
    let model = GshsModel::builder(space)
        .noise(vector_field(move |_, _, out| out[0] = sigma))
        .rate(scalar_field(move |_, _| rate), vec![rate])
        .reset(ResetKernel::Map(
            ResetMap::new(|x| HybridState::new(x.q, vec![0.5 * x.z[0]]))
                .with_inverse(|y| vec![HybridState::new(y.q, vec![2.0 * y.z[0]])], |_| 0.5),
        ))
        .build()?;
    Ok((model, vec![line_grid(t)?], ScenarioKind::Halving { rate, sigma }))
}

fn thermostat(t: &Table) -> Result<Parts> {
    let z_min = t.get("model.z_min");
    let z_max = t.get("model.z_max");
    if !(z_min < z_max) {
        return Err(invalid("model.z_max", "must be above model.z_min"));
    }
    let v = t.positive("model.v")?;
    let sigma = t.positive("model.sigma")?;
    let margin = t.positive("grid.margin")?;
    let n = t.count("grid.cells", 2)?;
    let h = (z_max - z_min + margin) / n as f64;
    let k = (z_max - z_min) / h;
    if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
        return Err(invalid(
            "grid.cells",
            "the thresholds must fall on cell faces of both mode grids",
        ));
    }
    let space = StateSpace::new(vec![
        ModeSpec::continuous(0, vec![(z_min, f64::INFINITY)]).with_guard(GuardFace::new(0, Side::Lower)),
        ModeSpec::continuous(1, vec![(f64::NEG_INFINITY, z_max)]).with_guard(GuardFace::new(0, Side::Upper)),
    ])?;
    let model = GshsModel::builder(space)
        .drift(vector_field(move |q, _, out| out[0] = if q == 0 { -v } else { v }))
        .noise(vector_field(move |_, _, out| out[0] = sigma))
        .reset(ResetKernel::Map(ResetMap::new(|x| HybridState::new(1 - x.q, x.z.clone()))))
        .build()?;
    let grid = vec![
        GridSpec::truncated(vec![n], vec![(z_min, z_max + margin)]),
        GridSpec::truncated(vec![n], vec![(z_min - margin, z_max)]),
    ];
    Ok((
        model,
        grid,
        ScenarioKind::Thermostat {
            z_min,
            z_max,
            v,
            sigma,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate_ensemble, EnsembleConfig, PathConfig, PathStatus};

    fn set(pairs: &[(&str, ParamValue)]) -> Overrides {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn every_entry_builds_and_simulates() {
        for name in CATALOG {
            let s = build(name, &Overrides::new()).unwrap();
            let cfg = EnsembleConfig {
                n_paths: 10,
                master_seed: 3,
                path: PathConfig::new(1.0, s.defaults.dt),
            };
            let summary = simulate_ensemble(&s.model, &s.initial, &cfg).unwrap();
            for tr in &summary.trajectories {
                assert_eq!(tr.status, PathStatus::Completed, "{name}");
            }
            let part = s.partition().unwrap();
            let mass: f64 = s.initial.cell_masses(&part).unwrap().iter().sum();
            assert!((mass - 1.0).abs() < 1e-9, "{name}: {mass}");
        }
    }

    #[test]
    fn conveyor_has_guard_at_one_and_resets_to_zero() {
        let s = build("conveyor", &Overrides::new()).unwrap();
        assert!(s.model.in_guard(&HybridState::new(0, vec![1.0]), 1e-12));
        assert!(!s.model.in_guard(&HybridState::new(0, vec![0.5]), 1e-12));
        let mut rng = path_rng_for_test();
        let post = s.model.reset_sample(&HybridState::new(0, vec![1.0]), &mut rng).unwrap();
        assert_eq!(post, HybridState::new(0, vec![0.0]));
        assert_eq!(s.defaults.t_end, 5.0);
        assert!(s.solver().is_none());
    }

    fn path_rng_for_test() -> PathRng {
        crate::simulator::path_rng(0, 0)
    }

    #[test]
    fn thermostat_switches_mode_at_both_thresholds() {
        let s = build(
            "thermostat-1d",
            &set(&[("model.z_min", (-1.0).into()), ("model.z_max", 1.0.into())]),
        )
        .unwrap();
        let mut rng = path_rng_for_test();
        for (q, z) in [(0, -1.0), (1, 1.0)] {
            let x = HybridState::new(q, vec![z]);
            assert!(s.model.in_guard(&x, 1e-12));
            assert_eq!(s.model.reset_sample(&x, &mut rng).unwrap(), HybridState::new(1 - q, vec![z]));
        }
        assert_eq!(s.model.max_rate_bound(), 0.0);
    }

    #[test]
    fn ctmc2_is_two_discrete_modes() {
        let s = build("ctmc2", &Overrides::new()).unwrap();
        assert_eq!(s.model.space().n_modes(), 2);
        assert!(s.model.space().modes().iter().all(ModeSpec::is_discrete));
        assert!(matches!(s.model.reset_kernel(), ResetKernel::ModeSwitch { .. }));
        assert_eq!(s.solver(), Some(SolverKind::Master));
    }

    #[test]
    fn chain_rates_are_seeded_and_bounded() {
        let a = build("ctmc-n", &Overrides::new()).unwrap();
        let b = build("ctmc-n", &Overrides::new()).unwrap();
        let c = build("ctmc-n", &set(&[("model.rate_seed", 8.0.into())])).unwrap();
        let (ScenarioKind::Chain { rates: ra }, ScenarioKind::Chain { rates: rb }, ScenarioKind::Chain { rates: rc }) =
            (&a.kind, &b.kind, &c.kind)
        else {
            panic!()
        };
        assert_eq!(ra, rb);
        assert_ne!(ra, rc);
        assert_eq!(ra.nrows(), 5);
        for i in 0..5 {
            for j in 0..5 {
                let r = ra[(i, j)];
                assert!(if i == j { r == 0.0 } else { (0.5..=2.0).contains(&r) });
            }
        }
    }

    #[test]
    fn overrides_report_field_paths() {
        let path = |r: Result<Scenario>| match r {
            Err(Error::InvalidParameter { path, .. }) => path,
            other => panic!("{other:?}"),
        };
        assert_eq!(path(build("conveyor", &set(&[("model.w", 1.0.into())]))), "model.w");
        assert_eq!(path(build("conveyor", &set(&[("model.v", (-1.0).into())]))), "model.v");
        assert_eq!(path(build("switching-ou", &set(&[("grid.cells", 2.5.into())]))), "grid.cells");
        assert_eq!(path(build("thermostat-1d", &set(&[("grid.cells", 161.0.into())]))), "grid.cells");
        assert_eq!(
            path(build("conveyor", &set(&[("mu0.kind", "delta".into()), ("mu0.at", 1.0.into())]))),
            "mu0.at"
        );
        assert_eq!(path(build("conveyor", &set(&[("mu0.upper", 1.5.into())]))), "mu0.lower");
        assert_eq!(path(build("conveyor", &set(&[("mu0.kind", "gaussian".into())]))), "mu0.kind");
        assert_eq!(path(build("ctmc2", &set(&[("model.rate_01", "fast".into())]))), "model.rate_01");
        assert!(matches!(build("nope", &Overrides::new()), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn delta_start_on_conveyor() {
        let s = build("conveyor", &set(&[("mu0.kind", "delta".into())])).unwrap();
        assert_eq!(
            s.initial,
            InitialLaw::Delta {
                state: HybridState::new(0, vec![0.0])
            }
        );
    }

    #[test]
    fn gaussian_cell_masses_match_the_cdf() {
        let s = build("switching-ou", &Overrides::new()).unwrap();
        let part = s.partition().unwrap();
        let m = s.initial.cell_masses(&part).unwrap();
        let in_mode0: f64 = m[part.mode_range(0)].iter().sum();
        assert!((in_mode0 - 1.0).abs() < 1e-12);
        assert!(m[part.mode_range(1)].iter().all(|&v| v == 0.0));
        let c = part.locate(&HybridState::new(0, vec![0.01])).unwrap();
        let (a, b) = part.cell_bounds(c)[0];
        let expect = normal_cdf(b / 0.5) - normal_cdf(a / 0.5);
        assert!((m[c] - expect).abs() < 1e-15);
    }

    #[test]
    fn mixture_samples_both_components() {
        let law = InitialLaw::Mixture {
            components: vec![
                (0.25, InitialLaw::Delta { state: HybridState::discrete(0) }),
                (0.75, InitialLaw::Delta { state: HybridState::discrete(1) }),
            ],
        };
        let s = build("ctmc2", &Overrides::new()).unwrap();
        law.validate(s.model.space()).unwrap();
        let mut rng = path_rng_for_test();
        let ones = (0..4000).filter(|_| law.sample(&mut rng).q == 1).count();
        assert!((ones as f64 / 4000.0 - 0.75).abs() < 0.03);
        let part = s.partition().unwrap();
        assert_eq!(law.cell_masses(&part).unwrap(), vec![0.25, 0.75]);
    }
}
