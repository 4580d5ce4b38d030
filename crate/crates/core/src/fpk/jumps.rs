//! Jump part of the generalized FPK equation as a linear map on cell masses.
//!
//! A [`JumpGenerator`] stores the out-rate of every cell and a transfer
//! matrix whose entry `(c, k)` is the rate at which mass in cell `k` arrives
//! in cell `c`. Column sums of the transfer equal the out-rate whenever the
//! jump lands inside the truncation, which makes the discrete equation
//! conservative.

use nalgebra::DMatrix;

use super::operator::check_partition;
use super::sparse::CsrMatrix;
use super::GridDensity;
use crate::error::{Error, Result};
use crate::estimation::JumpRates;
use crate::model::{GshsModel, ResetKernel, ResetMap};
use crate::state_space::{HybridState, ModeGrid, Partition};

#[derive(Debug, Clone, PartialEq)]
pub struct JumpGenerator {
    partition: Partition,
    volumes: Vec<f64>,
    transfer: CsrMatrix,
    out_rate: Vec<f64>,
}

impl JumpGenerator {
    /// Chain on the cells of `partition`; `rates[(i, j)]` is the jump rate
    /// from cell `i` to cell `j` (diagonal ignored).
    pub fn from_rate_matrix(partition: &Partition, rates: &DMatrix<f64>) -> Result<Self> {
        let n = partition.n_cells();
        if rates.nrows() != n || rates.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "rate matrix is {}x{} for {n} cells",
                rates.nrows(),
                rates.ncols()
            )));
        }
        let mut entries = Vec::new();
        let mut out_rate = vec![0.0; n];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let r = rates[(i, j)];
                if !(r >= 0.0) || !r.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "rate from {i} to {j} is {r}"
                    )));
                }
                entries.push((j, i, r));
                out_rate[i] += r;
            }
        }
        Ok(Self {
            partition: partition.clone(),
            volumes: partition.volumes(),
            transfer: CsrMatrix::from_triplets(n, n, entries),
            out_rate,
        })
    }

    /// Generator of the spontaneous jumps of `model` on `partition`.
    ///
    /// Mode switches use the dual kernel at cell centres. Density kernels
    /// use midpoint quadrature normalized per source cell. Reset maps move
    /// the mass of each source cell onto its image: in one dimension the
    /// image of the cell interval is spread over the target cells it
    /// overlaps, otherwise the mass follows the image of the centre.
    pub fn from_model(model: &GshsModel, partition: &Partition) -> Result<Self> {
        check_partition(model, partition)?;
        let n = partition.n_cells();
        let volumes = partition.volumes();
        let rates: Vec<f64> = (0..n)
            .map(|c| {
                let x = partition.center(c);
                model.rate(x.q, &x.z)
            })
            .collect();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        match model.reset_kernel() {
            ResetKernel::ModeSwitch { .. } => {
                for c in 0..n {
                    let y = partition.center(c);
                    for (k, w) in model.dual_weights(partition, &y)? {
                        entries.push((c, k, volumes[c] * w * rates[k] / volumes[k]));
                    }
                }
            }
            ResetKernel::Density { density, .. } => {
                for k in (0..n).filter(|&k| rates[k] > 0.0) {
                    let x = partition.center(k);
                    let w: Vec<f64> = (0..n)
                        .map(|c| density(&x, &partition.center(c)) * volumes[c])
                        .collect();
                    let total: f64 = w.iter().sum();
                    if total > 0.0 {
                        for (c, wc) in w.into_iter().enumerate() {
                            entries.push((c, k, rates[k] * wc / total));
                        }
                    }
                }
            }
            ResetKernel::Map(m) => {
                for k in (0..n).filter(|&k| rates[k] > 0.0) {
                    for (c, w) in map_transfer(partition, m, k) {
                        entries.push((c, k, rates[k] * w));
                    }
                }
            }
            ResetKernel::Mixture(maps) => {
                for k in (0..n).filter(|&k| rates[k] > 0.0) {
                    let x = partition.center(k);
                    for (weight, m) in maps {
                        let pw = weight(&x);
                        for (c, w) in map_transfer(partition, m, k) {
                            entries.push((c, k, rates[k] * pw * w));
                        }
                    }
                }
            }
        }
        Ok(Self {
            partition: partition.clone(),
            volumes,
            transfer: CsrMatrix::from_triplets(n, n, entries),
            out_rate: rates,
        })
    }

    /// Generator of a mode-switching model written directly as exchange
    /// terms `lambda(q', z) pi(q', q, z) p(q', z)` between matching cells of
    /// identical per-mode grids.
    pub fn switching(model: &GshsModel, partition: &Partition) -> Result<Self> {
        check_partition(model, partition)?;
        let ResetKernel::ModeSwitch { n_modes, switch } = model.reset_kernel() else {
            return Err(Error::Unsupported(
                "switching solver needs a mode-switch reset kernel".into(),
            ));
        };
        let grid0: &ModeGrid = partition.grid(0);
        if (1..*n_modes).any(|q| partition.grid(q) != grid0) {
            return Err(Error::Unsupported(
                "switching solver needs the same grid in every mode".into(),
            ));
        }
        let n = partition.n_cells();
        let per_mode = grid0.n_cells();
        let mut out_rate = vec![0.0; n];
        let mut entries = Vec::new();
        for q in 0..*n_modes {
            let range = partition.mode_range(q);
            for i in 0..per_mode {
                let x = partition.center(range.start + i);
                let lam = model.rate(q, &x.z);
                out_rate[range.start + i] = lam;
                for p in (0..*n_modes).filter(|&p| p != q) {
                    let target = partition.mode_range(p).start + i;
                    entries.push((target, range.start + i, lam * switch(q, p, &x.z)));
                }
            }
        }
        Ok(Self {
            partition: partition.clone(),
            volumes: partition.volumes(),
            transfer: CsrMatrix::from_triplets(n, n, entries),
            out_rate,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn out_rates(&self) -> &[f64] {
        &self.out_rate
    }

    pub fn transfer(&self) -> &CsrMatrix {
        &self.transfer
    }

    /// `r` per cell: mass leaving by jumps per unit time.
    pub fn sink_mass_rates(&self, masses: &[f64]) -> Vec<f64> {
        masses.iter().zip(&self.out_rate).map(|(m, l)| m * l).collect()
    }

    /// `r K` per cell: mass arriving by jumps per unit time.
    pub fn source_mass_rates(&self, masses: &[f64]) -> Vec<f64> {
        self.transfer.mul_vec(masses)
    }

    /// `K*(lambda p)` per cell, as a density rate.
    pub fn source_density(&self, p: &GridDensity) -> Vec<f64> {
        self.source_mass_rates(&p.masses())
            .iter()
            .zip(&self.volumes)
            .map(|(s, v)| s / v)
            .collect()
    }

    pub fn jump_rates(&self, p: &GridDensity) -> JumpRates {
        let m = p.masses();
        JumpRates {
            partition: self.partition.clone(),
            sink: self.sink_mass_rates(&m),
            source: self.source_mass_rates(&m),
        }
    }

    /// Matrix `J` with `dp/dt = J p` for densities.
    pub fn density_matrix(&self) -> CsrMatrix {
        let n = self.partition.n_cells();
        let mut entries: Vec<(usize, usize, f64)> = self
            .transfer
            .triplets()
            .into_iter()
            .map(|(c, k, v)| (c, k, v * self.volumes[k] / self.volumes[c]))
            .collect();
        entries.extend(self.out_rate.iter().enumerate().map(|(k, &l)| (k, k, -l)));
        CsrMatrix::from_triplets(n, n, entries)
    }
}

/// Distribution over cells of the image under `m` of source cell `k`.
fn map_transfer(partition: &Partition, m: &ResetMap, k: usize) -> Vec<(usize, f64)> {
    let x = partition.center(k);
    let image = m.apply(&x);
    let point = || {
        partition
            .locate(&image)
            .map(|c| vec![(c, 1.0)])
            .unwrap_or_default()
    };
    if x.z.len() != 1 || image.z.len() != 1 {
        return point();
    }
    let (lo, hi) = partition.cell_bounds(k)[0];
    let a = m.apply(&HybridState::new(x.q, vec![lo]));
    let b = m.apply(&HybridState::new(x.q, vec![hi]));
    if a.q != image.q || b.q != image.q {
        return point();
    }
    let (s, e) = (a.z[0].min(b.z[0]), a.z[0].max(b.z[0]));
    let ModeGrid::Grid { lower, upper, cells } = partition.grid(image.q) else {
        return point();
    };
    let len = e - s;
    let h = (upper[0] - lower[0]) / cells[0] as f64;
    if !(len > 1e-12 * h) {
        return point();
    }
    let first = (((s - lower[0]) / h).floor().max(0.0) as usize).min(cells[0] - 1);
    let last = ((((e - lower[0]) / h).ceil().max(1.0) as usize) - 1).min(cells[0] - 1);
    let offset = partition.mode_range(image.q).start;
    (first..=last)
        .filter_map(|i| {
            let c0 = lower[0] + i as f64 * h;
            let overlap = (e.min(c0 + h) - s.max(c0)).max(0.0);
            (overlap > 0.0).then(|| (offset + i, overlap / len))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::scalar_field;
    use crate::state_space::{GridField, GridSpec, ModeSpec, StateSpace};
    use std::sync::Arc;

    fn halving(lambda: f64, n: usize) -> (GshsModel, Partition) {
        let space = StateSpace::new(vec![ModeSpec::continuous(
            0,
            vec![(f64::NEG_INFINITY, f64::INFINITY)],
        )])
        .unwrap();
        let map = ResetMap::new(|x| HybridState::new(x.q, vec![0.5 * x.z[0]])).with_inverse(
            |x| vec![HybridState::new(x.q, vec![2.0 * x.z[0]])],
            |_| 0.5,
        );
        let m = GshsModel::builder(space)
            .rate(scalar_field(move |_, _| lambda), vec![lambda])
            .reset(ResetKernel::Map(map))
            .build()
            .unwrap();
        let part = Partition::new(m.space(), vec![GridSpec::truncated(vec![n], vec![(-8.0, 8.0)])]).unwrap();
        (m, part)
    }

    #[test]
    fn rate_matrix_generator_conserves() {
        let space = StateSpace::new((0..3).map(ModeSpec::discrete).collect()).unwrap();
        let part = Partition::new(&space, vec![GridSpec::atom(); 3]).unwrap();
        let q = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 0.5, 0.0, 0.0, 3.0, 1.0, 0.0]);
        let g = JumpGenerator::from_rate_matrix(&part, &q).unwrap();
        let j = g.density_matrix();
        for s in j.column_sums() {
            assert!(s.abs() < 1e-15);
        }
        assert_eq!(g.out_rates(), &[3.0, 0.5, 4.0]);
        let bad = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(JumpGenerator::from_rate_matrix(&part, &bad).is_err());
    }

    #[test]
    fn halving_map_transfer_matches_dual_at_centres() {
        let lambda = 1.3;
        let (m, part) = halving(lambda, 320);
        let g = JumpGenerator::from_model(&m, &part).unwrap();
        let values: Vec<f64> = (0..part.n_cells())
            .map(|c| {
                let z = part.center(c).z[0];
                (-(z - 0.7).powi(2)).exp()
            })
            .collect();
        let p = GridDensity::new(part.clone(), values.clone(), 0.0).unwrap();
        let src = g.source_density(&p);
        let lp: Vec<f64> = values.iter().map(|v| lambda * v).collect();
        let field = GridField::new(&part, &lp).unwrap();
        for c in 0..part.n_cells() {
            let y = part.center(c);
            let dual = m.dual_apply(&field, &y).unwrap();
            assert!((src[c] - dual).abs() < 1e-12, "cell {c}: {} vs {dual}", src[c]);
        }
        // everything lands inside the truncation: transfer preserves mass
        for (s, l) in g.transfer().column_sums().iter().zip(g.out_rates()) {
            assert!((s - l).abs() < 1e-12);
        }
    }

    #[test]
    fn switching_and_dual_routes_agree() {
        let space = StateSpace::new(vec![
            ModeSpec::continuous(0, vec![(f64::NEG_INFINITY, f64::INFINITY)]),
            ModeSpec::continuous(1, vec![(f64::NEG_INFINITY, f64::INFINITY)]),
        ])
        .unwrap();
        let m = GshsModel::builder(space)
            .rate(
                scalar_field(|q, z| if q == 0 { 1.0 + 0.5 * z[0].tanh() } else { 2.0 }),
                vec![1.5, 2.0],
            )
            .reset(ResetKernel::ModeSwitch {
                n_modes: 2,
                switch: Arc::new(|q, p, _| if q != p { 1.0 } else { 0.0 }),
            })
            .build()
            .unwrap();
        let spec = GridSpec::truncated(vec![60], vec![(-3.0, 3.0)]);
        let part = Partition::new(m.space(), vec![spec.clone(), spec]).unwrap();
        let a = JumpGenerator::from_model(&m, &part).unwrap().density_matrix();
        let b = JumpGenerator::switching(&m, &part).unwrap().density_matrix();
        let mut worst = 0.0f64;
        for (r, c, v) in a.triplets() {
            worst = worst.max((v - b.get(r, c)).abs());
        }
        for (r, c, v) in b.triplets() {
            worst = worst.max((v - a.get(r, c)).abs());
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn density_kernel_is_conservative() {
        let space = StateSpace::new(vec![ModeSpec::continuous(
            0,
            vec![(f64::NEG_INFINITY, f64::INFINITY)],
        )])
        .unwrap();
        let m = GshsModel::builder(space)
            .rate(scalar_field(|_, _| 1.0), vec![1.0])
            .reset(ResetKernel::Density {
                density: Arc::new(|x, y| (-(y.z[0] - x.z[0]).powi(2) / 0.5).exp()),
                sampler: None,
            })
            .build()
            .unwrap();
        let part = Partition::new(m.space(), vec![GridSpec::truncated(vec![50], vec![(-5.0, 5.0)])]).unwrap();
        let g = JumpGenerator::from_model(&m, &part).unwrap();
        let sums = g.transfer().column_sums();
        for s in sums {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}
