use std::collections::BTreeMap;
use std::time::Instant;

use gshs::estimation::{
    balance_check, estimate_jump_measure, estimate_law_all, mean_jump_intensity, BalanceCheck, EmpiricalLaw,
    IntensityEstimate, LawSeries,
};
use gshs::fpk::SolveConfig;
use gshs::scenarios::{build, Scenario};
use gshs::simulator::{simulate_ensemble, EnsembleConfig, EnsembleStats, EnsembleSummary, PathConfig};
use gshs::state_space::Partition;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{center_label, ensure_dir, num, write_json, Csv};
use crate::solver::{Solution, Solver};

pub struct Prepared {
    pub config: RunConfig,
    pub scenario: Scenario,
    pub partition: Partition,
}

impl Prepared {
    pub fn new(config: RunConfig) -> CliResult<Self> {
        let scenario = build(&config.scenario, &config.overrides)?;
        let partition = scenario.partition()?;
        ensure_dir(&config.out)?;
        Ok(Self {
            config,
            scenario,
            partition,
        })
    }

    /// Comment line of every CSV artifact.
    pub fn comment(&self, command: &str) -> String {
        let d = &self.scenario.defaults;
        format!(
            "gshs {command} scenario={} seed={} n_paths={} dt={} t_end={} cells={} bin_width={}",
            self.scenario.name,
            self.config.seed,
            d.n_paths,
            d.dt,
            d.t_end,
            self.partition.n_cells(),
            d.bin_width
        )
    }

    /// Simulator steps per sample, one sample per time bin.
    fn stride(&self) -> CliResult<usize> {
        let d = &self.scenario.defaults;
        let ratio = d.bin_width / d.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio {
            return Err(CliError::Config(format!(
                "run.bin_width {} is not a multiple of run.dt {}",
                d.bin_width, d.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn simulate(&self) -> CliResult<EnsembleSummary> {
        let d = &self.scenario.defaults;
        let cfg = EnsembleConfig {
            n_paths: d.n_paths,
            master_seed: self.config.seed,
            path: PathConfig::new(d.t_end, d.dt).with_stride(self.stride()?),
        };
        let start = Instant::now();
        let summary = simulate_ensemble(&self.scenario.model, &self.scenario.initial, &cfg)?;
        eprintln!(
            "simulated {} paths in {:.2} s",
            d.n_paths,
            start.elapsed().as_secs_f64()
        );
        Ok(summary)
    }

    pub fn estimate(&self, summary: &EnsembleSummary) -> CliResult<(EmpiricalLaw, IntensityEstimate)> {
        let law = estimate_law_all(summary, &self.partition)?;
        let measure = estimate_jump_measure(summary, &self.partition, self.scenario.defaults.bin_width)?;
        Ok((law, mean_jump_intensity(measure)))
    }

    pub fn solver(&self) -> CliResult<Solver> {
        Solver::new(&self.scenario, &self.partition)
    }

    pub fn solve_with(&self, solver: &Solver) -> CliResult<Solution> {
        let d = &self.scenario.defaults;
        let p0 = self.scenario.initial_density(&self.partition)?;
        let start = Instant::now();
        let sol = solver.solve(&p0, &SolveConfig::new(d.t_end, d.dt, d.bin_width))?;
        eprintln!("solved {} steps in {:.2} s", sol.fpk.steps, start.elapsed().as_secs_f64());
        Ok(sol)
    }
}

#[derive(Serialize)]
struct IntensitySummary {
    exists: bool,
    smoothness: f64,
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    scenario: &'a str,
    seed: u64,
    params: &'a BTreeMap<String, f64>,
    stats: EnsembleStats,
    mean_jump_intensity: IntensitySummary,
    balance: BalanceCheck,
    /// Fraction of paths outside the grid at each sample time.
    law_deficit: Vec<f64>,
}

pub fn run_simulate(config: RunConfig) -> CliResult<()> {
    let p = Prepared::new(config)?;
    let summary = p.simulate()?;
    let (law, est) = p.estimate(&summary)?;
    let dir = &p.config.out;
    let comment = p.comment("simulate");
    let part = &p.partition;
    let n = part.n_cells();

    let mut csv = Csv::create(dir, "law.csv", &comment, &["time", "cell", "mode", "z", "mass", "density", "std_error"])?;
    for (k, &t) in law.times().iter().enumerate() {
        let masses = law.masses(k);
        let density = law.density(k);
        let se = law.std_errors(k);
        for c in 0..n {
            csv.row(&[
                num(t),
                c.to_string(),
                part.cell_mode(c).to_string(),
                center_label(part, c),
                num(masses[c]),
                num(density[c]),
                num(se[c]),
            ])?;
        }
    }
    csv.finish()?;

    let mut csv = Csv::create(
        dir,
        "intensity.csv",
        &comment,
        &["bin_start", "bin_end", "cell", "mode", "z", "sink", "source", "spontaneous", "forced"],
    )?;
    for b in 0..est.n_bins() {
        let (s, e) = est.measure().bin_edges(b);
        let (sink, source, spont, forced) = (est.sink(b), est.source(b), est.spontaneous(b), est.forced(b));
        for c in 0..=n {
            let (mode, z) = if c < n {
                (part.cell_mode(c).to_string(), center_label(part, c))
            } else {
                (String::new(), "outside".to_string())
            };
            csv.row(&[
                num(s),
                num(e),
                c.to_string(),
                mode,
                z,
                num(sink[c]),
                num(source[c]),
                num(spont[c]),
                num(forced[c]),
            ])?;
        }
    }
    csv.finish()?;

    let mut csv = Csv::create(
        dir,
        "jump_totals.csv",
        &comment,
        &["bin_start", "bin_end", "sink_total", "source_total", "sink_std_error"],
    )?;
    for b in 0..est.n_bins() {
        let (s, e) = est.measure().bin_edges(b);
        csv.row(&[
            num(s),
            num(e),
            num(est.sink_total(b)),
            num(est.source_total(b)),
            num(est.sink_total_std_error(b)),
        ])?;
    }
    csv.finish()?;

    write_json(
        dir,
        "summary.json",
        &SimulateSummary {
            scenario: &p.scenario.name,
            seed: p.config.seed,
            params: &p.scenario.params,
            stats: summary.stats(),
            mean_jump_intensity: IntensitySummary {
                exists: est.has_mean_intensity(),
                smoothness: est.smoothness,
            },
            balance: balance_check(&est),
            law_deficit: (0..law.times().len()).map(|k| law.deficit(k)).collect(),
        },
    )
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    scenario: &'a str,
    params: &'a BTreeMap<String, f64>,
    dt: f64,
    stability_bound: f64,
    steps: usize,
    mass_drift_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_guard_density: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clipped_flux_steps: Option<usize>,
}

pub fn run_solve(config: RunConfig) -> CliResult<()> {
    let p = Prepared::new(config)?;
    let solver = p.solver()?;
    let sol = p.solve_with(&solver)?;
    let dir = &p.config.out;
    let comment = p.comment("solve");
    let part = &p.partition;
    let series = sol.series();

    let mut csv = Csv::create(dir, "density.csv", &comment, &["time", "cell", "mode", "z", "density", "mass"])?;
    for k in 0..series.len() {
        let masses = series.masses(k);
        for c in 0..part.n_cells() {
            csv.row(&[
                num(series.times[k]),
                c.to_string(),
                part.cell_mode(c).to_string(),
                center_label(part, c),
                num(series.values[k][c]),
                num(masses[c]),
            ])?;
        }
    }
    csv.finish()?;

    let mut header = vec!["time".to_string(), "total_mass".into(), "mass_change".into()];
    header.extend((0..part.n_modes()).map(|q| format!("mode_{q}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::create(dir, "mass.csv", &comment, &header)?;
    let totals = sol.fpk.total_masses();
    for k in 0..series.len() {
        let mut row = vec![num(series.times[k]), num(totals[k]), num(totals[k] - totals[0])];
        row.extend(series.snapshot(k).mode_masses().into_iter().map(num));
        csv.row(&row)?;
    }
    csv.finish()?;

    if let Some(flux) = &sol.flux {
        let mut csv = Csv::create(
            dir,
            "flux.csv",
            &comment,
            &["time", "mode", "guard", "extracted", "injected", "rate"],
        )?;
        let rates = flux.step_rates();
        for (s, (t, r)) in rates.iter().enumerate() {
            for (f, face) in flux.faces.iter().enumerate() {
                csv.row(&[
                    num(*t),
                    face.mode.to_string(),
                    num(face.coord),
                    num(flux.extracted[s][f]),
                    num(flux.injected[s][f]),
                    num(r[f]),
                ])?;
            }
        }
        csv.finish()?;
    }

    write_json(
        dir,
        "solve.json",
        &SolveSummary {
            scenario: &p.scenario.name,
            params: &p.scenario.params,
            dt: sol.fpk.dt,
            stability_bound: sol.fpk.stability_bound,
            steps: sol.fpk.steps,
            mass_drift_rate: sol.fpk.mass_drift_rate(),
            max_guard_density: sol
                .flux
                .as_ref()
                .map(|_| sol.guard_values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))),
            clipped_flux_steps: sol.flux.as_ref().map(|f| f.clipped),
        },
    )
}

/// Per-mode L1 distance between two cell-mass vectors.
pub fn mode_l1(part: &Partition, a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..part.n_modes())
        .map(|q| part.mode_range(q).map(|c| (a[c] - b[c]).abs()).sum())
        .collect()
}

pub fn run_compare(config: RunConfig) -> CliResult<()> {
    let p = Prepared::new(config)?;
    let solver = p.solver()?;
    let summary = p.simulate()?;
    let (law, _) = p.estimate(&summary)?;
    let sol = p.solve_with(&solver)?;
    let series = sol.series();
    let part = &p.partition;

    let mut csv = Csv::create(&p.config.out, "compare.csv", &p.comment("compare"), &["time", "mode", "l1"])?;
    println!("{:>8}  {:>6}  {:>12}", "time", "mode", "l1");
    for (k, &t) in series.times.iter().enumerate() {
        let kl = law.time_index(t)?;
        let per_mode = mode_l1(part, &law.masses(kl), &series.masses(k));
        let total: f64 = per_mode.iter().sum();
        for (q, v) in per_mode.iter().enumerate() {
            csv.row(&[num(t), q.to_string(), num(*v)])?;
        }
        csv.row(&[num(t), "all".into(), num(total)])?;
        println!("{t:>8.3}  {:>6}  {total:>12.4e}", "all");
    }
    csv.finish()
}
