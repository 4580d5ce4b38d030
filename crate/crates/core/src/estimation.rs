//! Measures estimated from ensembles: empirical laws, the jump measure and
//! its time density (mean jump intensity), plus Dynkin and weak-FPK
//! residuals.
//!
//! Jump counts are kept as integers so the sink/source and pair-marginal
//! identities hold exactly. Cell index `n_cells` collects states outside the
//! truncation.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GshsModel, TestFunction};
use crate::simulator::{EnsembleSummary, JumpKind};
use crate::state_space::{HybridState, Partition};

/// Adjacent-bin variation above which the jump measure is reported as
/// having no time density.
pub const SMOOTHNESS_THRESHOLD: f64 = 5.0;

/// A time series of cell masses on a partition.
pub trait LawSeries {
    fn partition(&self) -> &Partition;
    fn times(&self) -> &[f64];
    /// Mass per cell at stored time `k`.
    fn masses(&self, k: usize) -> Vec<f64>;

    /// `sum_c mass_c * values_c` at stored time `k`.
    fn expectation(&self, k: usize, values: &[f64]) -> f64 {
        self.masses(k).iter().zip(values).map(|(m, v)| m * v).sum()
    }

    fn time_index(&self, t: f64) -> Result<usize> {
        let times = self.times();
        let scale = times.last().map_or(1.0, |v| v.abs().max(1.0));
        times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * scale)
            .ok_or_else(|| Error::InvalidArgument(format!("time {t} is not a stored time")))
    }
}

/// Histogram estimate of `mu_t` at stored sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    partition: Partition,
    times: Vec<f64>,
    n_paths: usize,
    /// `n_times x (n_cells + 1)` counts; the last column counts paths
    /// outside the truncation or stopped.
    counts: Vec<u64>,
}

impl EmpiricalLaw {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn counts(&self, k: usize) -> &[u64] {
        let w = self.partition.n_cells() + 1;
        &self.counts[k * w..(k + 1) * w]
    }

    /// Mass missing from the partition at stored time `k`.
    pub fn deficit(&self, k: usize) -> f64 {
        let n = self.partition.n_cells();
        self.counts(k)[n] as f64 / self.n_paths as f64
    }

    /// Density with respect to the volume measure.
    pub fn density(&self, k: usize) -> Vec<f64> {
        self.masses(k)
            .iter()
            .enumerate()
            .map(|(c, m)| m / self.partition.cell_volume(c))
            .collect()
    }

    /// Binomial standard error of each cell mass.
    pub fn std_errors(&self, k: usize) -> Vec<f64> {
        let n = self.n_paths as f64;
        self.masses(k)
            .iter()
            .map(|&m| (m * (1.0 - m) / n).sqrt())
            .collect()
    }
}

impl LawSeries for EmpiricalLaw {
    fn partition(&self) -> &Partition {
        &self.partition
    }

    fn times(&self) -> &[f64] {
        &self.times
    }

    fn masses(&self, k: usize) -> Vec<f64> {
        let n = self.n_paths as f64;
        let counts = self.counts(k);
        counts[..self.partition.n_cells()]
            .iter()
            .map(|&c| c as f64 / n)
            .collect()
    }

    /// Sums over paths before dividing, so a constant function has the same
    /// expectation at every time when no path escapes.
    fn expectation(&self, k: usize, values: &[f64]) -> f64 {
        let counts = self.counts(k);
        let total: f64 = counts[..self.partition.n_cells()]
            .iter()
            .zip(values)
            .map(|(&c, v)| c as f64 * v)
            .sum();
        total / self.n_paths as f64
    }
}

/// Fraction of paths per cell at each requested time. Requested times must
/// be sample times of the ensemble.
pub fn estimate_law(
    summary: &EnsembleSummary,
    partition: &Partition,
    times: &[f64],
) -> Result<EmpiricalLaw> {
    let sample_times = summary.sample_times();
    let scale = sample_times.last().map_or(1.0, |v| v.abs().max(1.0));
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| {
            sample_times
                .iter()
                .position(|&s| (s - t).abs() <= 1e-9 * scale)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("time {t} is not a sample time of the ensemble"))
                })
        })
        .collect::<Result<_>>()?;
    let w = partition.n_cells() + 1;
    let mut counts = vec![0u64; times.len() * w];
    for tr in &summary.trajectories {
        for (k, &s) in idx.iter().enumerate() {
            counts[k * w + cell_or_outside(partition, tr.state_view(s))] += 1;
        }
    }
    Ok(EmpiricalLaw {
        partition: partition.clone(),
        times: times.to_vec(),
        n_paths: summary.n_paths(),
        counts,
    })
}

/// Empirical law at every sample time of the ensemble.
pub fn estimate_law_all(summary: &EnsembleSummary, partition: &Partition) -> Result<EmpiricalLaw> {
    let times = summary.sample_times().to_vec();
    estimate_law(summary, partition, &times)
}

fn cell_or_outside(partition: &Partition, view: Option<(usize, &[f64])>) -> usize {
    let outside = partition.n_cells();
    match view {
        Some((q, z)) => partition
            .locate(&HybridState::new(q, z.to_vec()))
            .unwrap_or(outside),
        None => outside,
    }
}

/// Raw jump counts `R(Gamma x (s, t])` on time bins `((k-1) dt, k dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasure {
    partition: Partition,
    bin_width: f64,
    n_bins: usize,
    n_paths: usize,
    spontaneous: Vec<u64>,
    forced: Vec<u64>,
    post: Vec<u64>,
    pairs: Vec<BTreeMap<(usize, usize), u64>>,
    pre_sum: Vec<f64>,
    pre_count: Vec<u64>,
}

/// Bin of a jump at time `t`; times within rounding of a bin edge belong to
/// the bin that ends there.
fn time_bin(t: f64, width: f64, n_bins: usize) -> usize {
    let k = (t / width - 1e-9).ceil() as i64 - 1;
    k.clamp(0, n_bins as i64 - 1) as usize
}

pub fn estimate_jump_measure(
    summary: &EnsembleSummary,
    partition: &Partition,
    bin_width: f64,
) -> Result<JumpMeasure> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidArgument("bin width must be positive".into()));
    }
    let t_end = summary.config.path.t_end;
    let n_bins = ((t_end / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let w = partition.n_cells() + 1;
    let stride = (0..partition.n_modes())
        .map(|q| partition.grid(q).spacing().len())
        .max()
        .unwrap_or(0);
    let mut m = JumpMeasure {
        partition: partition.clone(),
        bin_width,
        n_bins,
        n_paths: summary.n_paths(),
        spontaneous: vec![0; n_bins * w],
        forced: vec![0; n_bins * w],
        post: vec![0; n_bins * w],
        pairs: vec![BTreeMap::new(); n_bins],
        pre_sum: vec![0.0; w * stride],
        pre_count: vec![0; w],
    };
    for tr in &summary.trajectories {
        for j in &tr.jumps {
            let b = time_bin(j.time, bin_width, n_bins);
            let pre = partition.locate(&j.pre).unwrap_or(w - 1);
            let post = partition.locate(&j.post).unwrap_or(w - 1);
            match j.kind {
                JumpKind::Spontaneous => m.spontaneous[b * w + pre] += 1,
                JumpKind::Forced => m.forced[b * w + pre] += 1,
            }
            m.post[b * w + post] += 1;
            *m.pairs[b].entry((pre, post)).or_insert(0) += 1;
            m.pre_count[pre] += 1;
            for (i, v) in j.pre.z.iter().enumerate() {
                m.pre_sum[pre * stride + i] += v;
            }
        }
    }
    Ok(m)
}

impl JumpMeasure {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// `(start, end]` of bin `b`.
    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        (b as f64 * self.bin_width, (b + 1) as f64 * self.bin_width)
    }

    fn row<'a>(&self, v: &'a [u64], b: usize) -> &'a [u64] {
        let w = self.partition.n_cells() + 1;
        &v[b * w..(b + 1) * w]
    }

    /// Pre-jump counts per cell (spontaneous plus forced).
    pub fn sink_counts(&self, b: usize) -> Vec<u64> {
        self.row(&self.spontaneous, b)
            .iter()
            .zip(self.row(&self.forced, b))
            .map(|(a, c)| a + c)
            .collect()
    }

    pub fn spontaneous_counts(&self, b: usize) -> &[u64] {
        self.row(&self.spontaneous, b)
    }

    pub fn forced_counts(&self, b: usize) -> &[u64] {
        self.row(&self.forced, b)
    }

    /// Post-jump counts per cell.
    pub fn source_counts(&self, b: usize) -> &[u64] {
        self.row(&self.post, b)
    }

    /// Jump counts keyed by (pre-cell, post-cell).
    pub fn pair_counts(&self, b: usize) -> &BTreeMap<(usize, usize), u64> {
        &self.pairs[b]
    }

    pub fn total_jumps(&self, b: usize) -> u64 {
        self.sink_counts(b).iter().sum()
    }

    /// Mean pre-jump state of the jumps starting in `cell`.
    pub fn mean_pre_state(&self, cell: usize) -> Option<HybridState> {
        let n = self.pre_count.get(cell).copied().unwrap_or(0);
        if n == 0 || cell >= self.partition.n_cells() {
            return None;
        }
        let q = self.partition.cell_mode(cell);
        let dim = self.partition.grid(q).spacing().len();
        let stride = self.pre_sum.len() / self.pre_count.len();
        let z = (0..dim)
            .map(|i| self.pre_sum[cell * stride + i] / n as f64)
            .collect();
        Some(HybridState::new(q, z))
    }
}

/// Time density of the jump measure per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityEstimate {
    measure: JumpMeasure,
    /// Largest adjacent-bin variation of the total intensity after removing
    /// three Monte Carlo standard errors.
    pub smoothness: f64,
}

pub fn mean_jump_intensity(measure: JumpMeasure) -> IntensityEstimate {
    let totals: Vec<u64> = (0..measure.n_bins).map(|b| measure.total_jumps(b)).collect();
    let smoothness = totals
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0] as f64, w[1] as f64);
            if a + b == 0.0 {
                return 0.0;
            }
            let sigma = (a + b).sqrt();
            ((a - b).abs() - 3.0 * sigma).max(0.0) / (a.min(b) + 3.0 * sigma)
        })
        .fold(0.0, f64::max);
    IntensityEstimate {
        measure,
        smoothness,
    }
}

impl IntensityEstimate {
    pub fn measure(&self) -> &JumpMeasure {
        &self.measure
    }

    pub fn partition(&self) -> &Partition {
        &self.measure.partition
    }

    pub fn n_bins(&self) -> usize {
        self.measure.n_bins
    }

    pub fn bin_width(&self) -> f64 {
        self.measure.bin_width
    }

    /// `false` when the jump measure shows no time density at this
    /// resolution.
    pub fn has_mean_intensity(&self) -> bool {
        self.smoothness <= SMOOTHNESS_THRESHOLD
    }

    fn scale(&self) -> f64 {
        1.0 / (self.measure.n_paths as f64 * self.measure.bin_width)
    }

    fn rates(&self, counts: &[u64]) -> Vec<f64> {
        let s = self.scale();
        counts.iter().map(|&c| c as f64 * s).collect()
    }

    /// Sink `r` per cell (last entry: outside the truncation).
    pub fn sink(&self, b: usize) -> Vec<f64> {
        self.rates(&self.measure.sink_counts(b))
    }

    /// Source `r K` per cell.
    pub fn source(&self, b: usize) -> Vec<f64> {
        self.rates(self.measure.source_counts(b))
    }

    pub fn spontaneous(&self, b: usize) -> Vec<f64> {
        self.rates(self.measure.spontaneous_counts(b))
    }

    pub fn forced(&self, b: usize) -> Vec<f64> {
        self.rates(self.measure.forced_counts(b))
    }

    /// `r_t(E)` on bin `b`.
    pub fn sink_total(&self, b: usize) -> f64 {
        self.measure.total_jumps(b) as f64 * self.scale()
    }

    /// `rK(E)` on bin `b`.
    pub fn source_total(&self, b: usize) -> f64 {
        self.measure.source_counts(b).iter().sum::<u64>() as f64 * self.scale()
    }

    /// Standard error of `r_t(E)` on bin `b`, from per-path counts being
    /// approximately Poisson.
    pub fn sink_total_std_error(&self, b: usize) -> f64 {
        (self.measure.total_jumps(b) as f64).sqrt() * self.scale()
    }

    /// Pair histogram `W` as rates.
    pub fn pairs(&self, b: usize) -> BTreeMap<(usize, usize), f64> {
        let s = self.scale();
        self.measure.pairs[b]
            .iter()
            .map(|(&k, &c)| (k, c as f64 * s))
            .collect()
    }

    /// Bin containing `t` (bins are `(s, t]`).
    pub fn bin_of(&self, t: f64) -> usize {
        time_bin(t, self.measure.bin_width, self.measure.n_bins)
    }

    /// Sink and source rates of the bin containing `t`, per cell of the
    /// partition.
    pub fn rates_at(&self, t: f64) -> JumpRates {
        let b = self.bin_of(t);
        let n = self.partition().n_cells();
        let mut sink = self.sink(b);
        let mut source = self.source(b);
        sink.truncate(n);
        source.truncate(n);
        JumpRates {
            partition: self.partition().clone(),
            sink,
            source,
        }
    }
}

/// Exact counting identities of an intensity estimate on every bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BalanceCheck {
    /// Sum over bins of `|#pre - #post|`.
    pub sink_source_gap: u64,
    /// Cells whose pair-histogram marginal disagrees with the sink.
    pub sink_marginal_mismatches: u64,
    /// Cells whose pair-histogram marginal disagrees with the source.
    pub source_marginal_mismatches: u64,
    /// Cells where spontaneous plus forced differs from the sink.
    pub split_mismatches: u64,
}

impl BalanceCheck {
    pub fn is_exact(&self) -> bool {
        *self == Self {
            sink_source_gap: 0,
            sink_marginal_mismatches: 0,
            source_marginal_mismatches: 0,
            split_mismatches: 0,
        }
    }
}

pub fn balance_check(est: &IntensityEstimate) -> BalanceCheck {
    let m = &est.measure;
    let w = m.partition.n_cells() + 1;
    let mut out = BalanceCheck {
        sink_source_gap: 0,
        sink_marginal_mismatches: 0,
        source_marginal_mismatches: 0,
        split_mismatches: 0,
    };
    for b in 0..m.n_bins {
        let sink = m.sink_counts(b);
        let source = m.source_counts(b);
        out.sink_source_gap += sink.iter().sum::<u64>().abs_diff(source.iter().sum::<u64>());
        let mut by_pre = vec![0u64; w];
        let mut by_post = vec![0u64; w];
        for (&(i, j), &c) in &m.pairs[b] {
            by_pre[i] += c;
            by_post[j] += c;
        }
        let spont = m.spontaneous_counts(b);
        let forced = m.forced_counts(b);
        for c in 0..w {
            out.sink_marginal_mismatches += u64::from(by_pre[c] != sink[c]);
            out.source_marginal_mismatches += u64::from(by_post[c] != source[c]);
            out.split_mismatches += u64::from(spont[c] + forced[c] != sink[c]);
        }
    }
    out
}

/// Per-cell rates `r` (sink) and `rK` (source) at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRates {
    pub partition: Partition,
    pub sink: Vec<f64>,
    pub source: Vec<f64>,
}

/// Per-cell signed measure (mass or mass rate).
#[derive(Debug, Clone, PartialEq)]
pub struct CellMeasure {
    pub partition: Partition,
    pub values: Vec<f64>,
}

/// Terms of the Dynkin formula at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynkinResidual {
    /// `(mu_t - mu_0) phi`
    pub increment: f64,
    /// `int_0^t mu_s(L phi) ds`
    pub generator: f64,
    /// `int_0^t r_s (K - I) phi ds`
    pub jumps: f64,
    /// `increment - generator - jumps`
    pub residual: f64,
}

struct CellEvaluations {
    phi: Vec<f64>,
    generator: Vec<f64>,
    jump: Vec<f64>,
}

fn check_support(phi: &dyn TestFunction, partition: &Partition, model: &GshsModel) -> Result<()> {
    for (q, mode) in model.space().modes().iter().enumerate() {
        if mode.is_discrete() {
            continue;
        }
        let Some(support) = phi.support(q) else {
            continue;
        };
        if support.is_empty() {
            continue;
        }
        let trunc = truncation_box(partition, q);
        for (a, &(lo, hi)) in support.iter().enumerate() {
            let (mlo, mhi) = mode.bounds[a];
            let (tlo, thi) = trunc[a];
            if (mlo.is_infinite() && lo < tlo) || (mhi.is_infinite() && hi > thi) {
                return Err(Error::SupportExceedsTruncation);
            }
        }
    }
    Ok(())
}

fn truncation_box(partition: &Partition, q: usize) -> Vec<(f64, f64)> {
    let r = partition.mode_range(q);
    let first = partition.cell_bounds(r.start);
    let last = partition.cell_bounds(r.end - 1);
    first.iter().zip(&last).map(|(a, b)| (a.0, b.1)).collect()
}

fn cell_evaluations(
    model: &GshsModel,
    phi: &dyn TestFunction,
    partition: &Partition,
    representative: impl Fn(usize) -> HybridState,
) -> Result<CellEvaluations> {
    check_support(phi, partition, model)?;
    let n = partition.n_cells();
    let mut out = CellEvaluations {
        phi: Vec::with_capacity(n),
        generator: Vec::with_capacity(n),
        jump: Vec::with_capacity(n),
    };
    for c in 0..n {
        let x = partition.center(c);
        out.phi.push(phi.value(&x));
        out.generator.push(model.generator_apply(phi, &x));
        let y = representative(c);
        out.jump
            .push(model.kernel_apply(phi, &y, Some(partition))? - phi.value(&y));
    }
    Ok(out)
}

fn trapezoid_until(times: &[f64], k_end: usize, f: impl Fn(usize) -> f64) -> f64 {
    (0..k_end)
        .map(|k| 0.5 * (times[k + 1] - times[k]) * (f(k) + f(k + 1)))
        .sum()
}

/// Dynkin residual at stored time `t`. The law term uses cell centres; the
/// jump term uses the mean pre-jump state of each cell (cell centre when no
/// jump started there).
pub fn dynkin_residual(
    law: &dyn LawSeries,
    intensity: &IntensityEstimate,
    model: &GshsModel,
    phi: &dyn TestFunction,
    t: f64,
) -> Result<DynkinResidual> {
    let partition = law.partition();
    if partition != intensity.partition() {
        return Err(Error::PartitionMismatch);
    }
    let k_end = law.time_index(t)?;
    let m = intensity.measure();
    let ev = cell_evaluations(model, phi, partition, |c| {
        m.mean_pre_state(c).unwrap_or_else(|| partition.center(c))
    })?;
    let dot = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let increment = law.expectation(k_end, &ev.phi) - law.expectation(0, &ev.phi);
    let per_time: Vec<f64> = (0..=k_end).map(|k| law.expectation(k, &ev.generator)).collect();
    let generator = trapezoid_until(law.times(), k_end, |k| per_time[k]);
    let mut jumps = 0.0;
    let n = partition.n_cells();
    for b in 0..intensity.n_bins() {
        let (s, e) = m.bin_edges(b);
        let overlap = (e.min(t) - s).max(0.0);
        if overlap <= 0.0 {
            continue;
        }
        let sink = intensity.sink(b);
        jumps += overlap * dot(&sink[..n], &ev.jump);
    }
    Ok(DynkinResidual {
        increment,
        generator,
        jumps,
        residual: increment - generator - jumps,
    })
}

/// Monte Carlo standard error of [`dynkin_residual`] computed from the
/// per-path terms it averages. `t` must be both a sample time and a bin
/// edge.
pub fn dynkin_std_error(
    summary: &EnsembleSummary,
    intensity: &IntensityEstimate,
    model: &GshsModel,
    phi: &dyn TestFunction,
    t: f64,
) -> Result<f64> {
    let partition = intensity.partition();
    let m = intensity.measure();
    let ev = cell_evaluations(model, phi, partition, |c| {
        m.mean_pre_state(c).unwrap_or_else(|| partition.center(c))
    })?;
    let times = summary.sample_times();
    let scale = times.last().map_or(1.0, |v| v.abs().max(1.0));
    let k_end = times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * scale)
        .ok_or_else(|| Error::InvalidArgument(format!("time {t} is not a sample time")))?;
    let last_bin = intensity.bin_of(t);
    let n = partition.n_cells();
    let at = |c: usize, v: &[f64]| if c < n { v[c] } else { 0.0 };
    let values: Vec<f64> = summary
        .trajectories
        .iter()
        .map(|tr| {
            let cells: Vec<usize> = (0..=k_end)
                .map(|k| cell_or_outside(partition, tr.state_view(k)))
                .collect();
            let inc = at(cells[k_end], &ev.phi) - at(cells[0], &ev.phi);
            let gen = trapezoid_until(times, k_end, |k| at(cells[k], &ev.generator));
            let jumps: f64 = tr
                .jumps
                .iter()
                .filter(|j| time_bin(j.time, m.bin_width(), m.n_bins()) <= last_bin)
                .map(|j| at(partition.locate(&j.pre).unwrap_or(n), &ev.jump))
                .sum();
            inc - gen - jumps
        })
        .collect();
    let n_paths = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n_paths;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_paths - 1.0).max(1.0);
    Ok((var / n_paths).sqrt())
}

/// `mu'_t` on cells by central differences of stored masses (one-sided at
/// the ends of the series).
pub fn law_derivative(law: &dyn LawSeries, k: usize) -> Result<CellMeasure> {
    let times = law.times();
    if times.len() < 2 || k >= times.len() {
        return Err(Error::InvalidArgument(
            "need at least two stored times and a valid index".into(),
        ));
    }
    let (a, b) = if k == 0 {
        (0, 1)
    } else if k + 1 == times.len() {
        (k - 1, k)
    } else {
        (k - 1, k + 1)
    };
    let dt = times[b] - times[a];
    let (ma, mb) = (law.masses(a), law.masses(b));
    Ok(CellMeasure {
        partition: law.partition().clone(),
        values: ma.iter().zip(&mb).map(|(x, y)| (y - x) / dt).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFpkReport {
    pub residual: Vec<f64>,
    pub max_abs: f64,
    pub l1: f64,
}

/// Weak-FPK consistency per cell:
/// `mu'_t(cell) - (L* mu_t)(cell) - (rK - r)(cell)`.
pub fn weak_fpk_check(
    law_derivative: &CellMeasure,
    lstar: &CellMeasure,
    jumps: &JumpRates,
) -> Result<WeakFpkReport> {
    let p = &law_derivative.partition;
    if &lstar.partition != p || &jumps.partition != p {
        return Err(Error::PartitionMismatch);
    }
    let n = p.n_cells();
    for len in [
        law_derivative.values.len(),
        lstar.values.len(),
        jumps.sink.len(),
        jumps.source.len(),
    ] {
        if len != n {
            return Err(Error::PartitionMismatch);
        }
    }
    let residual: Vec<f64> = (0..n)
        .map(|c| {
            law_derivative.values[c] - lstar.values[c] - (jumps.source[c] - jumps.sink[c])
        })
        .collect();
    let max_abs = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let l1 = residual.iter().map(|v| v.abs()).sum();
    Ok(WeakFpkReport {
        residual,
        max_abs,
        l1,
    })
}

/// `sum |a - b|` over matching entries.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
