use std::collections::BTreeMap;

use gshs::estimation::{
    balance_check, dynkin_residual, dynkin_std_error, law_derivative, weak_fpk_check, EmpiricalLaw, IntensityEstimate,
    LawSeries,
};
use gshs::model::{Bump, Constant, TestFunction};
use gshs::scenarios::{build, InitialLaw, ParamValue, Scenario, ScenarioKind};
use gshs::simulator::{EnsembleSummary, JumpKind};
use gshs::state_space::{HybridState, Partition};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::commands::{mode_l1, Prepared};
use crate::config::{RunConfig, Tolerances};
use crate::error::CliResult;
use crate::output::write_json;
use crate::solver::{Solution, Solver};

/// Pathwise-exact identities (deterministic resets) have zero standard
/// error; their residual is rounding only.
const STD_ERROR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: &'static str,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=",
            tolerance,
            passed: value <= tolerance,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=",
            tolerance,
            passed: value >= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DynkinEntry {
    pub test_function: String,
    pub t: f64,
    pub increment: f64,
    pub generator: f64,
    pub jumps: f64,
    pub residual: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakFpkEntry {
    pub t: f64,
    pub residual_l1: f64,
    pub refined_residual_l1: f64,
    pub discretization_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub flags: Vec<String>,
    pub dynkin: Vec<DynkinEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weak_fpk: Option<WeakFpkEntry>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// `exp(Q^T t) p0` for the chain with off-diagonal rates `rates[(i, j)]`.
pub fn chain_law(rates: &DMatrix<f64>, p0: &[f64], t: f64) -> Vec<f64> {
    let g = generator_transpose(rates);
    ((g * t).exp() * DVector::from_column_slice(p0)).as_slice().to_vec()
}

/// `Q^T`, so that `p' = Q^T p`.
pub fn generator_transpose(rates: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rates.nrows();
    let mut q = rates.clone();
    for i in 0..n {
        q[(i, i)] = 0.0;
        q[(i, i)] = -q.row(i).sum();
    }
    q.transpose()
}

/// Law of `X_0 + sum of N_t Gaussian steps` for a Gaussian `X_0` and
/// Poisson `N_t`.
fn pure_jump_law(initial: &InitialLaw, rate: f64, kernel_std: f64, t: f64) -> Option<InitialLaw> {
    let InitialLaw::Gaussian { mode, mean, std } = initial else {
        return None;
    };
    let mut components = Vec::new();
    let mut w = (-rate * t).exp();
    for k in 0..200 {
        if k > 0 {
            w *= rate * t / k as f64;
        }
        let s = (std[0] * std[0] + k as f64 * kernel_std * kernel_std).sqrt();
        components.push((
            w,
            InitialLaw::Gaussian {
                mode: *mode,
                mean: mean.clone(),
                std: vec![s],
            },
        ));
        if k as f64 > rate * t && w < 1e-18 {
            break;
        }
    }
    Some(InitialLaw::Mixture { components })
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let s = (x - x0) / (x1 - x0);
    ys[i - 1] * (1.0 - s) + ys[i] * s
}

/// Test functions used for the Dynkin check of each scenario.
fn test_functions(s: &Scenario) -> Vec<(String, Box<dyn TestFunction>)> {
    let bump = |c: f64, r: f64| -> (String, Box<dyn TestFunction>) {
        (format!("bump(mode 0, centre {c}, radius {r})"), Box::new(Bump::new(0, vec![c], vec![r])))
    };
    let mut out: Vec<(String, Box<dyn TestFunction>)> = vec![("constant".into(), Box::new(Constant(1.0)))];
    match &s.kind {
        ScenarioKind::Conveyor { .. } => out.push(bump(0.5, 0.3)),
        ScenarioKind::Chain { .. } => out.push((
            "indicator(mode 0)".into(),
            Box::new(|x: &HybridState| if x.q == 0 { 1.0 } else { 0.0 }),
        )),
        ScenarioKind::PureJump { .. } => out.push(bump(0.0, 2.0)),
        ScenarioKind::SwitchingOu { .. } => out.push(bump(0.0, 1.5)),
        ScenarioKind::Halving { .. } => out.push(bump(0.5, 1.5)),
        ScenarioKind::Thermostat { z_min, .. } => out.push(bump(z_min + 1.5, 0.75)),
    }
    out
}

fn coarsen(fine: &Partition, coarse: &Partition, values: &[f64]) -> CliResult<Vec<f64>> {
    let mut out = vec![0.0; coarse.n_cells()];
    for (c, v) in values.iter().enumerate() {
        out[coarse.locate(&fine.center(c))?] += v;
    }
    Ok(out)
}

struct Verifier<'a> {
    p: &'a Prepared,
    tol: &'a Tolerances,
    checks: Vec<Check>,
    flags: Vec<String>,
}

impl Verifier<'_> {
    fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn dynkin(&mut self, summary: &EnsembleSummary, law: &EmpiricalLaw, est: &IntensityEstimate) -> CliResult<Vec<DynkinEntry>> {
        let s = &self.p.scenario;
        let t = s.defaults.t_end;
        let mut out = Vec::new();
        for (name, phi) in test_functions(s) {
            let r = dynkin_residual(law, est, &s.model, phi.as_ref(), t)?;
            let se = dynkin_std_error(summary, est, &s.model, phi.as_ref(), t)?;
            if name == "constant" {
                self.push(Check::at_most("dynkin_constant", r.residual.abs(), self.tol.get("dynkin_constant")));
            } else if est.has_mean_intensity() {
                self.push(Check::at_most(
                    format!("dynkin_sigmas[{name}]"),
                    r.residual.abs() / se.max(STD_ERROR_FLOOR),
                    self.tol.get("dynkin_sigma"),
                ));
            }
            out.push(DynkinEntry {
                test_function: name,
                t,
                increment: r.increment,
                generator: r.generator,
                jumps: r.jumps,
                residual: r.residual,
                std_error: se,
            });
        }
        Ok(out)
    }

    fn conveyor(&mut self, v: f64, est: &IntensityEstimate) {
        let n_bins = est.n_bins();
        if est.has_mean_intensity() {
            let dev = (0..n_bins)
                .map(|b| (est.sink_total(b) - v).abs() / v)
                .fold(0.0, f64::max);
            self.push(Check::at_most("intensity_vs_speed_rel", dev, self.tol.get("intensity_rel")));
            let part = &self.p.partition;
            let guard = part.n_cells() - 1;
            let (at_guard, total) = (0..n_bins).fold((0.0, 0.0), |(g, t), b| {
                (g + est.sink(b)[guard], t + est.sink_total(b))
            });
            self.push(Check::at_least("sink_share_in_guard_cell", at_guard / total, self.tol.get("guard_share")));
        } else {
            self.flags.push("no_mean_intensity".into());
            let m = est.measure();
            let (mut at_int, mut total) = (0u64, 0u64);
            for b in 0..n_bins {
                let (s, e) = m.bin_edges(b);
                let n = m.total_jumps(b);
                total += n;
                if (s - 1e-9).ceil() <= e + 1e-9 {
                    at_int += n;
                }
            }
            self.push(Check::at_least(
                "jump_share_in_integer_time_bins",
                at_int as f64 / total.max(1) as f64,
                self.tol.get("integer_time_share"),
            ));
        }
    }

    fn solver_checks(&mut self, solver: &Solver, sol: &Solution, law: &EmpiricalLaw, summary: &EnsembleSummary) -> CliResult<()> {
        let s = &self.p.scenario;
        let part = &self.p.partition;
        let series = sol.series();
        let t_end = s.defaults.t_end;
        let k_end = series.len() - 1;
        let mc = law.masses(law.time_index(t_end)?);
        let pde = series.masses(k_end);
        self.push(Check::at_most("mass_drift_per_time", sol.fpk.mass_drift_rate(), self.tol.get("mass_drift")));

        match &s.kind {
            ScenarioKind::Chain { rates } => {
                let p0 = series.masses(0);
                let err = (0..series.len())
                    .map(|k| {
                        let exact = chain_law(rates, &p0, series.times[k]);
                        series.masses(k).iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max);
                self.push(Check::at_most("solver_vs_matrix_exponential_max_abs", err, self.tol.get("oracle_abs")));
                let exact = chain_law(rates, &p0, t_end);
                let n = summary.n_paths() as f64;
                let sig = mc
                    .iter()
                    .zip(&exact)
                    .map(|(m, p)| {
                        let sd = (p * (1.0 - p) / n).sqrt();
                        if sd > 0.0 {
                            (m - p).abs() / sd
                        } else if m == p {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    })
                    .fold(0.0, f64::max);
                self.push(Check::at_most("ensemble_vs_matrix_exponential_sigmas", sig, self.tol.get("oracle_sigma")));
            }
            _ => {
                let l1 = mode_l1(part, &mc, &pde);
                for (q, v) in l1.iter().enumerate() {
                    self.push(Check::at_most(format!("ensemble_vs_solver_l1[mode {q}]"), *v, self.tol.get("mc_l1")));
                }
            }
        }

        match &s.kind {
            ScenarioKind::SwitchingOu { rates, .. } => {
                let mut r = DMatrix::zeros(2, 2);
                r[(0, 1)] = rates[0];
                r[(1, 0)] = rates[1];
                let p0 = series.snapshot(0).mode_masses();
                let exact = chain_law(&r, &p0, t_end);
                let modes = |m: &[f64]| -> Vec<f64> {
                    (0..2).map(|q| part.mode_range(q).map(|c| m[c]).sum()).collect()
                };
                for (label, m) in [("ensemble", modes(&mc)), ("solver", modes(&pde))] {
                    let err = m.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    self.push(Check::at_most(format!("{label}_mode_mass_vs_two_state_chain"), err, self.tol.get("mode_mass")));
                }
            }
            ScenarioKind::PureJump { rate, kernel_std } => {
                if let Some(exact) = pure_jump_law(&s.initial, *rate, *kernel_std, t_end) {
                    let exact = exact.cell_masses(part)?;
                    let err: f64 = exact.iter().zip(&pde).map(|(a, b)| (a - b).abs()).sum();
                    self.push(Check::at_most("solver_vs_poisson_gaussian_mixture_l1", err, self.tol.get("oracle_l1")));
                }
            }
            ScenarioKind::Halving { rate, .. } => {
                let p = series.snapshot(k_end);
                let gen = solver.jump_generator().expect("halving uses a jump generator");
                let source = gen.source_density(&p);
                let xs: Vec<f64> = (0..part.n_cells()).map(|c| part.center(c).z[0]).collect();
                let h = xs[1] - xs[0];
                let peak = p.values.iter().fold(0.0f64, |m, v| m.max(*v));
                let reach = 0.5 * xs[xs.len() - 1].min(-xs[0]);
                let mut worst = 0.0f64;
                for (c, &x) in xs.iter().enumerate() {
                    if x.abs() > reach {
                        continue;
                    }
                    let expect = 2.0 * rate * interpolate(&xs, &p.values, 2.0 * x);
                    if expect > 1e-8 * peak {
                        worst = worst.max((source[c] - expect).abs() / expect);
                    }
                }
                self.push(Check::at_most("halving_source_rel_error_over_h", worst / h, self.tol.get("source_h_factor")));
            }
            ScenarioKind::Thermostat { .. } => {
                let flux = sol.flux.as_ref().expect("thermostat records fluxes");
                let guard = sol.guard_values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
                self.push(Check::at_most("guard_density", guard, self.tol.get("guard_density")));
                let scale = flux.extracted.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
                self.push(Check::at_most(
                    "flux_transfer_mismatch",
                    flux.max_transfer_mismatch(),
                    self.tol.get("transfer_eps") * f64::EPSILON * scale,
                ));
                let t0 = if t_end > 1.0 { 1.0 } else { 0.0 };
                let forced = summary
                    .trajectories
                    .iter()
                    .flat_map(|tr| &tr.jumps)
                    .filter(|j| j.kind == JumpKind::Forced && j.time > t0 && j.time <= t_end)
                    .count();
                let mc_rate = forced as f64 / (summary.n_paths() as f64 * (t_end - t0));
                let pde_rate = flux.mean_rate(t0, t_end);
                self.push(Check::at_most(
                    "guard_flux_vs_ensemble_forced_rate_rel",
                    (pde_rate - mc_rate).abs() / mc_rate,
                    self.tol.get("flux_rel"),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Weak-FPK residual at the middle snapshot, on the default resolution
    /// and on one with grid, step and snapshot interval halved.
    fn weak_fpk(&mut self, solver: &Solver, sol: &Solution) -> CliResult<WeakFpkEntry> {
        let s = &self.p.scenario;
        let series = sol.series();
        let k = (series.len() - 1) / 2;
        let t = series.times[k];
        let residual = |solver: &Solver, series: &gshs::fpk::DensitySeries, k: usize| -> CliResult<(f64, Vec<f64>)> {
            let d = law_derivative(series, k)?;
            let p = series.snapshot(k);
            let r = weak_fpk_check(&d, &solver.lstar_mass_rates(&p), &solver.jump_rates(&p))?;
            Ok((r.l1, d.values))
        };
        let (coarse, deriv) = residual(solver, series, k)?;

        let mut overrides = self.p.config.overrides.clone();
        let d = s.defaults;
        overrides.insert("run.dt".into(), ParamValue::Number(d.dt / 2.0));
        overrides.insert("run.bin_width".into(), ParamValue::Number(d.bin_width / 2.0));
        if let Some(cells) = s.params.get("grid.cells") {
            overrides.insert("grid.cells".into(), ParamValue::Number(2.0 * cells));
        }
        let scenario = build(&s.name, &overrides)?;
        let fine = Prepared {
            partition: scenario.partition()?,
            scenario,
            config: RunConfig {
                overrides,
                ..self.p.config.clone()
            },
        };
        let fine_solver = fine.solver()?;
        let fine_sol = fine.solve_with(&fine_solver)?;
        let fs = fine_sol.series();
        let (refined, fine_deriv) = residual(&fine_solver, fs, fs.time_index(t)?)?;

        let error: f64 = match &s.kind {
            ScenarioKind::Chain { rates } => {
                let exact = generator_transpose(rates) * DVector::from_vec(series.masses(k));
                deriv.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).sum()
            }
            _ => {
                let mapped = coarsen(&fine.partition, &self.p.partition, &fine_deriv)?;
                deriv.iter().zip(&mapped).map(|(a, b)| (a - b).abs()).sum()
            }
        };
        self.push(Check::at_most(
            "weak_fpk_residual_over_discretization_error",
            coarse / error,
            self.tol.get("residual_factor"),
        ));
        self.push(Check::at_least(
            "weak_fpk_residual_refinement_factor",
            coarse / refined,
            self.tol.get("refinement_factor"),
        ));
        Ok(WeakFpkEntry {
            t,
            residual_l1: coarse,
            refined_residual_l1: refined,
            discretization_error: error,
        })
    }
}

pub fn verify(config: RunConfig) -> CliResult<VerifyReport> {
    let p = Prepared::new(config)?;
    let solver = match p.scenario.solver() {
        Some(_) => Some(p.solver()?),
        None => None,
    };
    let summary = p.simulate()?;
    let (law, est) = p.estimate(&summary)?;
    let mut v = Verifier {
        p: &p,
        tol: &p.config.tolerances,
        checks: Vec::new(),
        flags: Vec::new(),
    };
    let balance = balance_check(&est);
    v.push(Check::at_most(
        "sink_source_balance_mismatches",
        (balance.sink_source_gap
            + balance.sink_marginal_mismatches
            + balance.source_marginal_mismatches
            + balance.split_mismatches) as f64,
        0.0,
    ));
    let dynkin = v.dynkin(&summary, &law, &est)?;
    if let ScenarioKind::Conveyor { v: speed } = p.scenario.kind {
        v.conveyor(speed, &est);
    }
    let mut weak_fpk = None;
    if let Some(solver) = &solver {
        let sol = p.solve_with(solver)?;
        v.solver_checks(solver, &sol, &law, &summary)?;
        weak_fpk = Some(v.weak_fpk(solver, &sol)?);
    }
    let passed = v.checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        scenario: p.scenario.name.clone(),
        seed: p.config.seed,
        params: p.scenario.params.clone(),
        flags: v.flags,
        dynkin,
        weak_fpk,
        checks: v.checks,
        passed,
    })
}

/// Runs the checks, writes `verify.json` and prints one line per check.
pub fn run_verify(config: RunConfig) -> CliResult<bool> {
    let out = config.out.clone();
    let report = verify(config)?;
    write_json(&out, "verify.json", &report)?;
    for c in &report.checks {
        println!(
            "{} {} = {:.4e} ({} {:.4e})",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.relation,
            c.tolerance
        );
    }
    for f in &report.flags {
        println!("flag {f}");
    }
    Ok(report.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_law_of_symmetric_pair() {
        let mut r = DMatrix::zeros(2, 2);
        r[(0, 1)] = 1.0;
        r[(1, 0)] = 1.0;
        let p = chain_law(&r, &[1.0, 0.0], 2.0);
        let e = 0.5 + 0.5 * (-4.0f64).exp();
        assert!((p[0] - e).abs() < 1e-14 && (p[1] - (1.0 - e)).abs() < 1e-14);
    }

    #[test]
    fn poisson_mixture_weights_sum_to_one() {
        let init = InitialLaw::Gaussian {
            mode: 0,
            mean: vec![0.0],
            std: vec![1.0],
        };
        let InitialLaw::Mixture { components } = pure_jump_law(&init, 1.0, 0.5, 2.0).unwrap() else {
            panic!()
        };
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        assert!((total - 1.0).abs() < 1e-15);
        let var: f64 = components
            .iter()
            .map(|(w, l)| match l {
                InitialLaw::Gaussian { std, .. } => w * std[0] * std[0],
                _ => unreachable!(),
            })
            .sum();
        assert!((var - 1.5).abs() < 1e-12);
    }

    #[test]
    fn interpolation_is_linear_between_nodes() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 2.0, 0.0];
        assert_eq!(interpolate(&xs, &ys, 0.5), 1.0);
        assert_eq!(interpolate(&xs, &ys, 1.5), 1.0);
        assert_eq!(interpolate(&xs, &ys, 1.0), 2.0);
    }
}
