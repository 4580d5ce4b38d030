use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use gshs::estimation::{
    balance_check, dynkin_residual, dynkin_std_error, estimate_jump_measure, estimate_law_all, law_derivative,
    mean_jump_intensity, weak_fpk_check, CellMeasure, EmpiricalLaw, IntensityEstimate, JumpRates, LawSeries,
};
use gshs::fpk::{DensitySeries, FluxRecord, FpkProblem, GridDensity, JumpGenerator, SolveConfig, ThermostatProblem};
use gshs::model::{Bump, Constant};
use gshs::scenarios::{build, Overrides, ParamValue, Scenario, ScenarioKind};
use gshs::simulator::{simulate_ensemble, EnsembleConfig, EnsembleSummary, JumpKind, PathConfig};
use gshs::state_space::Partition;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;
const N_PATHS: usize = 100_000;

type Outcome = Result<String, String>;

fn overrides(entries: &[(&str, ParamValue)]) -> Overrides {
    entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn scenario(name: &str, entries: &[(&str, ParamValue)]) -> (Scenario, Partition) {
    let s = build(name, &overrides(entries)).unwrap();
    let p = s.partition().unwrap();
    (s, p)
}

struct Ensemble {
    scenario: Scenario,
    partition: Partition,
    summary: EnsembleSummary,
    law: EmpiricalLaw,
    est: IntensityEstimate,
    seconds: f64,
}

fn ensemble(name: &str, entries: &[(&str, ParamValue)], single_thread: bool) -> Ensemble {
    let (scenario, partition) = scenario(name, entries);
    let d = scenario.defaults;
    let stride = (d.bin_width / d.dt).round() as usize;
    let cfg = EnsembleConfig {
        n_paths: d.n_paths,
        master_seed: SEED,
        path: PathConfig::new(d.t_end, d.dt).with_stride(stride),
    };
    let start = Instant::now();
    let summary = if single_thread {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        pool.install(|| simulate_ensemble(&scenario.model, &scenario.initial, &cfg)).unwrap()
    } else {
        simulate_ensemble(&scenario.model, &scenario.initial, &cfg).unwrap()
    };
    let seconds = start.elapsed().as_secs_f64();
    let law = estimate_law_all(&summary, &partition).unwrap();
    let est = mean_jump_intensity(estimate_jump_measure(&summary, &partition, d.bin_width).unwrap());
    Ensemble {
        scenario,
        partition,
        summary,
        law,
        est,
        seconds,
    }
}

fn conveyor_uniform() -> &'static Ensemble {
    static E: OnceLock<Ensemble> = OnceLock::new();
    E.get_or_init(|| {
        ensemble(
            "conveyor",
            &[
                ("mu0.kind", "uniform".into()),
                ("model.v", 1.0.into()),
                ("run.n_paths", (N_PATHS as f64).into()),
                ("run.dt", 1e-3.into()),
                ("run.t_end", 5.0.into()),
                ("run.bin_width", 0.1.into()),
            ],
            true,
        )
    })
}

fn switching_ou() -> &'static Ensemble {
    static E: OnceLock<Ensemble> = OnceLock::new();
    E.get_or_init(|| ensemble("switching-ou", &[("run.n_paths", (N_PATHS as f64).into())], false))
}

fn thermostat() -> &'static Ensemble {
    static E: OnceLock<Ensemble> = OnceLock::new();
    E.get_or_init(|| ensemble("thermostat-1d", &[("run.n_paths", (N_PATHS as f64).into())], false))
}

enum Solver {
    Linear(FpkProblem),
    Thermostat(ThermostatProblem),
}

struct Solved {
    series: DensitySeries,
    mass_drift_rate: f64,
    flux: Option<FluxRecord>,
    guard_values: Vec<Vec<f64>>,
}

impl Solver {
    fn for_scenario(s: &Scenario, part: &Partition) -> Self {
        match &s.kind {
            ScenarioKind::Chain { .. } | ScenarioKind::PureJump { .. } => {
                Solver::Linear(FpkProblem::master(JumpGenerator::from_model(&s.model, part).unwrap()))
            }
            ScenarioKind::SwitchingOu { .. } => Solver::Linear(FpkProblem::switching(&s.model, part).unwrap()),
            ScenarioKind::Halving { .. } => Solver::Linear(FpkProblem::spontaneous(&s.model, part).unwrap()),
            ScenarioKind::Thermostat { .. } => Solver::Thermostat(ThermostatProblem::new(&s.model, part).unwrap()),
            ScenarioKind::Conveyor { .. } => panic!("conveyor has no grid solver"),
        }
    }

    fn solve(&self, s: &Scenario, part: &Partition) -> Solved {
        let d = s.defaults;
        let p0 = s.initial_density(part).unwrap();
        let cfg = SolveConfig::new(d.t_end, d.dt, d.bin_width);
        match self {
            Solver::Linear(p) => {
                let sol = p.solve(&p0, &cfg).unwrap();
                Solved {
                    mass_drift_rate: sol.mass_drift_rate(),
                    series: sol.series,
                    flux: None,
                    guard_values: Vec::new(),
                }
            }
            Solver::Thermostat(p) => {
                let sol = p.solve(&p0, &cfg).unwrap();
                Solved {
                    mass_drift_rate: sol.solution.mass_drift_rate(),
                    series: sol.solution.series,
                    flux: Some(sol.flux),
                    guard_values: sol.guard_values,
                }
            }
        }
    }

    fn lstar(&self, p: &GridDensity) -> CellMeasure {
        match self {
            Solver::Linear(s) => s.lstar_mass_rates(p),
            Solver::Thermostat(s) => s.lstar_mass_rates(p),
        }
    }

    fn jumps(&self, p: &GridDensity) -> JumpRates {
        match self {
            Solver::Linear(s) => s.jump_rates(p),
            Solver::Thermostat(s) => s.jump_rates(p),
        }
    }
}

fn solve(name: &str, entries: &[(&str, ParamValue)]) -> (Scenario, Partition, Solver, Solved) {
    let (s, part) = scenario(name, entries);
    let solver = Solver::for_scenario(&s, &part);
    let solved = solver.solve(&s, &part);
    (s, part, solver, solved)
}

/// `Q^T` of the chain whose off-diagonal rates are `rates[(i, j)]`.
fn forward_generator(rates: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rates.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -(0..n).filter(|&k| k != j).map(|k| rates[(j, k)]).sum::<f64>()
        } else {
            rates[(j, i)]
        }
    })
}

fn mode_masses(part: &Partition, masses: &[f64]) -> Vec<f64> {
    (0..part.n_modes()).map(|q| part.mode_range(q).map(|c| masses[c]).sum()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn conveyor_intensity() -> Outcome {
    let e = conveyor_uniform();
    let n_bins = e.est.n_bins();
    let totals: Vec<f64> = (0..n_bins).map(|b| e.est.sink_total(b)).collect();
    let lo = totals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let guard = e.partition.n_cells() - 1;
    let at_guard: f64 = (0..n_bins).map(|b| e.est.sink(b)[guard]).sum();
    let share = at_guard / totals.iter().sum::<f64>();
    ensure(
        e.est.has_mean_intensity() && lo >= 0.98 && hi <= 1.02 && share >= 0.99 && e.seconds < 30.0,
        format!(
            "{n_bins} bins, r(E) in [{lo:.4}, {hi:.4}], guard-cell share {share:.4}, single-thread simulation {:.1} s",
            e.seconds
        ),
    )
}

fn conveyor_point_mass() -> Outcome {
    let e = ensemble(
        "conveyor",
        &[("mu0.kind", "delta".into()), ("run.n_paths", 1000.0.into()), ("run.t_end", 5.0.into())],
        false,
    );
    let m = e.est.measure();
    let (mut at_integer, mut total) = (0u64, 0u64);
    for b in 0..m.n_bins() {
        let (s, t) = m.bin_edges(b);
        let n = m.total_jumps(b);
        total += n;
        if (s - 1e-9).ceil() <= t + 1e-9 {
            at_integer += n;
        }
    }
    let share = at_integer as f64 / total as f64;
    ensure(
        !e.est.has_mean_intensity() && total > 0 && share >= 0.95,
        format!(
            "intensity flagged absent: {}, {total} jumps, share in integer-time bins {share:.4}",
            !e.est.has_mean_intensity()
        ),
    )
}

fn chain_forward_equation() -> Outcome {
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for name in ["ctmc2", "ctmc-n"] {
        let (s, _, _, solved) = solve(name, &[("run.t_end", 2.0.into())]);
        let ScenarioKind::Chain { rates } = &s.kind else { unreachable!() };
        let k = solved.series.len() - 1;
        assert!((solved.series.times[k] - 2.0).abs() < 1e-12);
        let p0 = DVector::from_vec(solved.series.snapshot(0).masses());
        let exact = (forward_generator(rates) * 2.0).exp() * p0;
        let err = max_abs_diff(&solved.series.snapshot(k).masses(), exact.as_slice());
        worst = worst.max(err);
        details.push(format!("{name} ({} states) {err:.2e}", rates.nrows()));
    }
    ensure(worst <= 1e-8, format!("max abs error at t=2: {}", details.join(", ")))
}

fn switching_cross_validation() -> Outcome {
    let e = switching_ou();
    let (_, part, _, solved) = solve("switching-ou", &[]);
    let t = 2.0;
    let mc = e.law.masses(e.law.time_index(t).unwrap());
    let pde = solved.series.snapshot(solved.series.time_index(t).unwrap()).masses();
    let per_mode: Vec<f64> = (0..2)
        .map(|q| {
            let r = part.mode_range(q);
            l1(&mc[r.clone()], &pde[r])
        })
        .collect();
    let oracle = [0.5 + 0.5 * (-2.0 * t).exp(), 0.5 - 0.5 * (-2.0 * t).exp()];
    let mc_modes = mode_masses(&part, &mc);
    let pde_modes = mode_masses(&part, &pde);
    let mc_err = max_abs_diff(&mc_modes, &oracle);
    let pde_err = max_abs_diff(&pde_modes, &oracle);
    ensure(
        per_mode.iter().all(|&v| v <= 0.05) && mc_err <= 0.01 && pde_err <= 0.01,
        format!(
            "L1 per mode [{:.4}, {:.4}], mode-mass error ensemble {mc_err:.2e} solver {pde_err:.2e}",
            per_mode[0], per_mode[1]
        ),
    )
}

fn linear_interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.iter().position(|&v| v > x).unwrap_or(xs.len() - 1).max(1);
    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    (1.0 - w) * ys[i - 1] + w * ys[i]
}

fn halving_source() -> Outcome {
    let (s, part) = scenario("hespanha-halving", &[("run.t_end", 1.0.into())]);
    let ScenarioKind::Halving { rate, .. } = s.kind else { unreachable!() };
    let problem = FpkProblem::spontaneous(&s.model, &part).unwrap();
    let d = s.defaults;
    let sol = problem
        .solve(&s.initial_density(&part).unwrap(), &SolveConfig::new(d.t_end, d.dt, d.bin_width))
        .unwrap();
    let p = sol.series.last();
    let source = problem.jump_generator().unwrap().source_density(&p);
    let xs: Vec<f64> = (0..part.n_cells()).map(|c| part.center(c).z[0]).collect();
    let h = xs[1] - xs[0];
    let inner: Vec<usize> = (0..xs.len()).filter(|&c| xs[c].abs() <= 3.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = inner[rng.gen_range(0..inner.len())];
        let expect = 2.0 * rate * linear_interpolate(&xs, &p.values, 2.0 * xs[c]);
        worst = worst.max((source[c] - expect).abs() / expect);
    }
    ensure(
        worst <= 5.0 * h,
        format!("20 points, max relative error {worst:.2e}, bound 5h = {:.2e}", 5.0 * h),
    )
}

fn thermostat_boundary() -> Outcome {
    let (_, _, _, solved) = solve("thermostat-1d", &[]);
    let flux = solved.flux.as_ref().unwrap();
    let guard = solved.guard_values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = flux.extracted.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mismatch = flux.max_transfer_mismatch();
    let e = thermostat();
    let (t0, t1) = (1.0, e.scenario.defaults.t_end);
    let forced = e
        .summary
        .trajectories
        .iter()
        .flat_map(|tr| &tr.jumps)
        .filter(|j| j.kind == JumpKind::Forced && j.time > t0 && j.time <= t1)
        .count();
    let mc_rate = forced as f64 / (e.summary.n_paths() as f64 * (t1 - t0));
    let pde_rate = flux.mean_rate(t0, t1);
    let rel = (pde_rate - mc_rate).abs() / mc_rate;
    ensure(
        guard <= 1e-10
            && mismatch <= 8.0 * f64::EPSILON * scale
            && rel <= 0.05
            && solved.mass_drift_rate <= 1e-6,
        format!(
            "guard density {guard:.1e}, transfer mismatch {mismatch:.1e} (scale {scale:.1e}), \
             forced-jump rate solver {pde_rate:.4} vs ensemble {mc_rate:.4} (rel {rel:.3}), mass drift {:.1e}/time",
            solved.mass_drift_rate
        ),
    )
}

fn residual_at(solver: &Solver, series: &DensitySeries, k: usize) -> (f64, Vec<f64>) {
    let d = law_derivative(series, k).unwrap();
    let p = series.snapshot(k);
    let r = weak_fpk_check(&d, &solver.lstar(&p), &solver.jumps(&p)).unwrap();
    (r.l1, d.values)
}

fn weak_fpk_residual() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for name in ["ctmc2", "switching-ou", "thermostat-1d"] {
        let (s, part, solver, solved) = solve(name, &[]);
        let k = (solved.series.len() - 1) / 2;
        let t = solved.series.times[k];
        let (coarse, deriv) = residual_at(&solver, &solved.series, k);

        let d = s.defaults;
        let mut refine = vec![("run.dt", (d.dt / 2.0).into()), ("run.bin_width", (d.bin_width / 2.0).into())];
        if let Some(cells) = s.params.get("grid.cells") {
            refine.push(("grid.cells", (2.0 * cells).into()));
        }
        let (_, fine_part, fine_solver, fine) = solve(name, &refine);
        let kf = fine.series.time_index(t).unwrap();
        let (refined, fine_deriv) = residual_at(&fine_solver, &fine.series, kf);

        let error = match &s.kind {
            ScenarioKind::Chain { rates } => {
                let exact = forward_generator(rates) * DVector::from_vec(solved.series.snapshot(k).masses());
                l1(&deriv, exact.as_slice())
            }
            _ => {
                let mut mapped = vec![0.0; part.n_cells()];
                for (c, v) in fine_deriv.iter().enumerate() {
                    mapped[part.locate(&fine_part.center(c)).unwrap()] += v;
                }
                l1(&deriv, &mapped)
            }
        };
        let ratio = coarse / error;
        let factor = coarse / refined;
        ok &= ratio <= 5.0 && factor >= 2.0;
        details.push(format!("{name}: residual/error {ratio:.2}, refinement {factor:.2}"));
    }
    ensure(ok, details.join("; "))
}

fn dynkin() -> Outcome {
    let e = conveyor_uniform();
    let t = e.scenario.defaults.t_end;
    let constant = dynkin_residual(&e.law, &e.est, &e.scenario.model, &Constant(1.0), t).unwrap();
    let bump = Bump::new(0, vec![0.5], vec![0.3]);
    let r = dynkin_residual(&e.law, &e.est, &e.scenario.model, &bump, t).unwrap();
    let se = dynkin_std_error(&e.summary, &e.est, &e.scenario.model, &bump, t).unwrap();
    ensure(
        constant.residual == 0.0 && r.residual.abs() <= 3.0 * se,
        format!(
            "constant residual {:e}, bump residual {:.3e} = {:.2} standard errors",
            constant.residual,
            r.residual,
            r.residual.abs() / se
        ),
    )
}

fn conservation() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for (name, e) in [("conveyor", conveyor_uniform()), ("switching-ou", switching_ou()), ("thermostat-1d", thermostat())] {
        let b = balance_check(&e.est);
        ok &= b.is_exact();
        details.push(format!("{name} balance exact: {}", b.is_exact()));
    }
    let mut worst = 0.0f64;
    for name in ["ctmc2", "ctmc-n", "pure-jump-continuous", "switching-ou", "hespanha-halving"] {
        let (_, _, _, solved) = solve(name, &[]);
        worst = worst.max(solved.mass_drift_rate);
    }
    ok &= worst <= 1e-6;
    details.push(format!("max mass drift {worst:.1e}/time on guard-free scenarios"));
    ensure(ok, details.join(", "))
}

fn run_cli(out: &Path, args: &[&str], workers: usize) -> (i32, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_gshs"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--workers")
        .arg(workers.to_string())
        .output()
        .unwrap();
    (o.status.code().unwrap_or(-1), o.stdout)
}

fn snapshot_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let runs: [&[&str]; 5] = [
        &["simulate", "--scenario", "conveyor", "--paths", "2000"],
        &["simulate", "--scenario", "switching-ou", "--paths", "2000"],
        &["solve", "--scenario", "ctmc2"],
        &["verify", "--scenario", "ctmc2", "--paths", "2000"],
        &["compare", "--scenario", "switching-ou", "--paths", "2000"],
    ];
    let mut files = 0;
    for args in runs {
        let outputs: Vec<_> = [1, 4, 4]
            .iter()
            .map(|&w| {
                let dir = tempfile::tempdir().unwrap();
                let (code, stdout) = run_cli(dir.path(), args, w);
                (code, stdout, snapshot_dir(dir.path()))
            })
            .collect();
        let (code, _, first) = &outputs[0];
        if !(*code == 0 || *code == 1) || first.is_empty() {
            return Err(format!("{} exited with {code}", args.join(" ")));
        }
        if outputs.iter().any(|o| o != &outputs[0]) {
            return Err(format!("{} differs across runs", args.join(" ")));
        }
        files += first.len();
    }
    Ok(format!("{} commands, {files} output files identical with 1, 4 and 4 workers", runs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("conveyor mean jump intensity", conveyor_intensity),
        ("conveyor point-mass start has no intensity", conveyor_point_mass),
        ("master equation vs matrix exponential", chain_forward_equation),
        ("switching diffusion ensemble vs solver", switching_cross_validation),
        ("halving source term", halving_source),
        ("thermostat guard flux", thermostat_boundary),
        ("weak Fokker-Planck residual", weak_fpk_residual),
        ("Dynkin residual", dynkin),
        ("conservation identities", conservation),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {} {name}: PASS ({d}; {secs:.1} s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({d}; {secs:.1} s)", i + 1)
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
