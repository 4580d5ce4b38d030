//! Hybrid state space: per-mode boxes, guard faces, grids and the volume
//! measure (Lebesgue measure on continuous modes plus a unit atom on every
//! purely discrete mode).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which end of an axis a boundary face sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

/// A face of a mode's box declared to belong to the guard set.
///
/// `restrict` optionally limits the face to a sub-range of the other axes,
/// as `(axis, lower, upper)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardFace {
    pub axis: usize,
    pub side: Side,
    #[serde(default)]
    pub restrict: Vec<(usize, f64, f64)>,
}

impl GuardFace {
    pub fn new(axis: usize, side: Side) -> Self {
        Self {
            axis,
            side,
            restrict: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub id: usize,
    /// Per-axis `(lower, upper)`; bounds may be infinite. Empty for purely
    /// discrete modes.
    pub bounds: Vec<(f64, f64)>,
    pub guard_faces: Vec<GuardFace>,
}

impl ModeSpec {
    pub fn discrete(id: usize) -> Self {
        Self {
            id,
            bounds: Vec::new(),
            guard_faces: Vec::new(),
        }
    }

    pub fn continuous(id: usize, bounds: Vec<(f64, f64)>) -> Self {
        Self {
            id,
            bounds,
            guard_faces: Vec::new(),
        }
    }

    pub fn with_guard(mut self, face: GuardFace) -> Self {
        self.guard_faces.push(face);
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_discrete(&self) -> bool {
        self.bounds.is_empty()
    }

    /// Coordinate of the face on `axis`/`side`.
    pub fn face_coord(&self, axis: usize, side: Side) -> f64 {
        match side {
            Side::Lower => self.bounds[axis].0,
            Side::Upper => self.bounds[axis].1,
        }
    }

    fn validate(&self) -> Result<()> {
        for (axis, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || !(lo < hi) {
                return Err(Error::InvalidSpace(format!(
                    "mode {}: axis {axis} has lower bound {lo} not below upper bound {hi}",
                    self.id
                )));
            }
        }
        for face in &self.guard_faces {
            if face.axis >= self.dim() {
                return Err(Error::InvalidSpace(format!(
                    "mode {}: guard face on axis {} but mode has dimension {}",
                    self.id,
                    face.axis,
                    self.dim()
                )));
            }
            if !self.face_coord(face.axis, face.side).is_finite() {
                return Err(Error::InvalidSpace(format!(
                    "mode {}: guard face on axis {} lies at infinity",
                    self.id, face.axis
                )));
            }
            for &(axis, lo, hi) in &face.restrict {
                if axis >= self.dim() || axis == face.axis || !(lo < hi) {
                    return Err(Error::InvalidSpace(format!(
                        "mode {}: malformed guard sub-range on axis {axis}",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A point `(q, z)` of the hybrid state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub q: usize,
    pub z: Vec<f64>,
}

impl HybridState {
    pub fn new(q: usize, z: Vec<f64>) -> Self {
        Self { q, z }
    }

    pub fn discrete(q: usize) -> Self {
        Self { q, z: Vec::new() }
    }
}

/// Finitely many modes with axis-aligned boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    modes: Vec<ModeSpec>,
}

impl StateSpace {
    /// Mode ids must be `0..modes.len()` in order.
    pub fn new(modes: Vec<ModeSpec>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidSpace("no modes".into()));
        }
        for (i, m) in modes.iter().enumerate() {
            if m.id != i {
                return Err(Error::InvalidSpace(format!(
                    "mode at position {i} has id {}",
                    m.id
                )));
            }
            m.validate()?;
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, q: usize) -> Result<&ModeSpec> {
        self.modes.get(q).ok_or(Error::InvalidMode(q))
    }

    pub fn max_dim(&self) -> usize {
        self.modes.iter().map(ModeSpec::dim).max().unwrap_or(0)
    }

    pub fn check_state(&self, x: &HybridState) -> Result<()> {
        let mode = self.mode(x.q)?;
        if x.z.len() != mode.dim() {
            return Err(Error::InvalidState(format!(
                "mode {} has dimension {} but z has length {}",
                x.q,
                mode.dim(),
                x.z.len()
            )));
        }
        for (axis, (&zi, &(lo, hi))) in x.z.iter().zip(&mode.bounds).enumerate() {
            if !(zi >= lo && zi <= hi) {
                return Err(Error::InvalidState(format!(
                    "z[{axis}] = {zi} outside [{lo}, {hi}] in mode {}",
                    x.q
                )));
            }
        }
        Ok(())
    }

    /// True iff `x` is within `tol` (per axis) of a declared guard face.
    pub fn in_guard(&self, x: &HybridState, tol: f64) -> bool {
        let Some(mode) = self.modes.get(x.q) else {
            return false;
        };
        mode.guard_faces.iter().any(|face| {
            let coord = mode.face_coord(face.axis, face.side);
            (x.z[face.axis] - coord).abs() <= tol
                && face
                    .restrict
                    .iter()
                    .all(|&(axis, lo, hi)| x.z[axis] >= lo - tol && x.z[axis] <= hi + tol)
        })
    }
}

/// Grid request for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cells: Vec<usize>,
    /// Per-axis truncation; `None` uses the mode box, which must then be
    /// bounded.
    pub truncation: Option<Vec<(f64, f64)>>,
}

impl GridSpec {
    pub fn atom() -> Self {
        Self {
            cells: Vec::new(),
            truncation: None,
        }
    }

    pub fn uniform(cells: Vec<usize>) -> Self {
        Self {
            cells,
            truncation: None,
        }
    }

    pub fn truncated(cells: Vec<usize>, truncation: Vec<(f64, f64)>) -> Self {
        Self {
            cells,
            truncation: Some(truncation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModeGrid {
    Atom,
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        cells: Vec<usize>,
    },
}

impl ModeGrid {
    pub fn n_cells(&self) -> usize {
        match self {
            ModeGrid::Atom => 1,
            ModeGrid::Grid { cells, .. } => cells.iter().product(),
        }
    }

    pub fn spacing(&self) -> Vec<f64> {
        match self {
            ModeGrid::Atom => Vec::new(),
            ModeGrid::Grid {
                lower,
                upper,
                cells,
            } => lower
                .iter()
                .zip(upper)
                .zip(cells)
                .map(|((lo, hi), &n)| (hi - lo) / n as f64)
                .collect(),
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Row-major multi-index (axis 0 slowest) of a mode-local cell.
    pub fn multi_index(&self, local: usize) -> Vec<usize> {
        match self {
            ModeGrid::Atom => Vec::new(),
            ModeGrid::Grid { cells, .. } => {
                let mut idx = vec![0; cells.len()];
                let mut rem = local;
                for axis in (0..cells.len()).rev() {
                    idx[axis] = rem % cells[axis];
                    rem /= cells[axis];
                }
                idx
            }
        }
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        match self {
            ModeGrid::Atom => 0,
            ModeGrid::Grid { cells, .. } => idx
                .iter()
                .zip(cells)
                .fold(0, |acc, (&i, &n)| acc * n + i),
        }
    }
}

/// Regular rectangular grid on every continuous mode and one atom per
/// discrete mode. Cells are numbered globally, mode by mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    grids: Vec<ModeGrid>,
    offsets: Vec<usize>,
    total: usize,
}

impl Partition {
    pub fn new(space: &StateSpace, specs: Vec<GridSpec>) -> Result<Self> {
        if specs.len() != space.n_modes() {
            return Err(Error::InvalidSpace(format!(
                "{} grid specs for {} modes",
                specs.len(),
                space.n_modes()
            )));
        }
        let mut grids = Vec::with_capacity(specs.len());
        for (mode, spec) in space.modes().iter().zip(specs) {
            if mode.is_discrete() {
                if !spec.cells.is_empty() {
                    return Err(Error::InvalidSpace(format!(
                        "mode {} is discrete but grid has cells",
                        mode.id
                    )));
                }
                grids.push(ModeGrid::Atom);
                continue;
            }
            if spec.cells.len() != mode.dim() || spec.cells.iter().any(|&n| n == 0) {
                return Err(Error::InvalidSpace(format!(
                    "mode {}: need {} positive cell counts",
                    mode.id,
                    mode.dim()
                )));
            }
            let bounds = spec.truncation.unwrap_or_else(|| mode.bounds.clone());
            if bounds.len() != mode.dim() {
                return Err(Error::InvalidSpace(format!(
                    "mode {}: truncation has wrong dimension",
                    mode.id
                )));
            }
            for (axis, (&(lo, hi), &(blo, bhi))) in bounds.iter().zip(&mode.bounds).enumerate() {
                if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
                    return Err(Error::InvalidSpace(format!(
                        "mode {}: axis {axis} needs a finite truncation",
                        mode.id
                    )));
                }
                if lo < blo || hi > bhi {
                    return Err(Error::InvalidSpace(format!(
                        "mode {}: truncation [{lo}, {hi}] leaves the box on axis {axis}",
                        mode.id
                    )));
                }
            }
            grids.push(ModeGrid::Grid {
                lower: bounds.iter().map(|b| b.0).collect(),
                upper: bounds.iter().map(|b| b.1).collect(),
                cells: spec.cells,
            });
        }
        let mut offsets = Vec::with_capacity(grids.len());
        let mut total = 0;
        for g in &grids {
            offsets.push(total);
            total += g.n_cells();
        }
        Ok(Self {
            grids,
            offsets,
            total,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.total
    }

    pub fn n_modes(&self) -> usize {
        self.grids.len()
    }

    pub fn grid(&self, q: usize) -> &ModeGrid {
        &self.grids[q]
    }

    pub fn mode_range(&self, q: usize) -> std::ops::Range<usize> {
        self.offsets[q]..self.offsets[q] + self.grids[q].n_cells()
    }

    pub fn cell_mode(&self, cell: usize) -> usize {
        self.offsets.partition_point(|&o| o <= cell) - 1
    }

    fn check_cell(&self, cell: usize) -> Result<()> {
        if cell < self.total {
            Ok(())
        } else {
            Err(Error::InvalidCell(cell))
        }
    }

    /// Volume-measure mass of a single cell.
    pub fn cell_volume(&self, cell: usize) -> f64 {
        self.grids[self.cell_mode(cell)].cell_volume()
    }

    /// Volume measure of a union of cells: Lebesgue volume on continuous
    /// modes plus the count of discrete atoms.
    pub fn volume(&self, cells: &[usize]) -> Result<f64> {
        let mut v = 0.0;
        for &c in cells {
            self.check_cell(c)?;
            v += self.cell_volume(c);
        }
        Ok(v)
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.total).map(|c| self.cell_volume(c)).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.grids
            .iter()
            .map(|g| g.cell_volume() * g.n_cells() as f64)
            .sum()
    }

    /// Cell containing `x`. A point on a face shared by two cells belongs to
    /// the lower-indexed one.
    pub fn locate(&self, x: &HybridState) -> Result<usize> {
        let grid = self.grids.get(x.q).ok_or(Error::InvalidMode(x.q))?;
        match grid {
            ModeGrid::Atom => Ok(self.offsets[x.q]),
            ModeGrid::Grid {
                lower,
                upper,
                cells,
            } => {
                if x.z.len() != cells.len() {
                    return Err(Error::InvalidState(format!(
                        "z has length {} in mode {}",
                        x.z.len(),
                        x.q
                    )));
                }
                let mut idx = Vec::with_capacity(cells.len());
                for axis in 0..cells.len() {
                    let (lo, hi, n) = (lower[axis], upper[axis], cells[axis]);
                    let z = x.z[axis];
                    if !(z >= lo && z <= hi) {
                        return Err(Error::EscapedTruncation {
                            mode: x.q,
                            z: x.z.clone(),
                        });
                    }
                    let s = (z - lo) / ((hi - lo) / n as f64);
                    let i = (s.ceil() as i64 - 1).clamp(0, n as i64 - 1) as usize;
                    idx.push(i);
                }
                Ok(self.offsets[x.q] + grid.linear_index(&idx))
            }
        }
    }

    pub fn center(&self, cell: usize) -> HybridState {
        let q = self.cell_mode(cell);
        match &self.grids[q] {
            ModeGrid::Atom => HybridState::discrete(q),
            g @ ModeGrid::Grid { lower, .. } => {
                let idx = g.multi_index(cell - self.offsets[q]);
                let h = g.spacing();
                let z = idx
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| lower[a] + (i as f64 + 0.5) * h[a])
                    .collect();
                HybridState::new(q, z)
            }
        }
    }

    /// Per-axis `(lower, upper)` extent of a cell; empty for atoms.
    pub fn cell_bounds(&self, cell: usize) -> Vec<(f64, f64)> {
        let q = self.cell_mode(cell);
        match &self.grids[q] {
            ModeGrid::Atom => Vec::new(),
            g @ ModeGrid::Grid { lower, .. } => {
                let idx = g.multi_index(cell - self.offsets[q]);
                let h = g.spacing();
                idx.iter()
                    .enumerate()
                    .map(|(a, &i)| {
                        let lo = lower[a] + i as f64 * h[a];
                        (lo, lo + h[a])
                    })
                    .collect()
            }
        }
    }

    /// Global index of the cell of mode `q` with multi-index `idx`.
    pub fn cell_at(&self, q: usize, idx: &[usize]) -> usize {
        self.offsets[q] + self.grids[q].linear_index(idx)
    }

    /// True iff the truncation box of mode `q` contains `z` (closed).
    pub fn contains(&self, x: &HybridState) -> bool {
        match self.grids.get(x.q) {
            None => false,
            Some(ModeGrid::Atom) => true,
            Some(ModeGrid::Grid { lower, upper, .. }) => x
                .z
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&z, (&lo, &hi))| z >= lo && z <= hi),
        }
    }
}

/// Scalar field stored per cell, evaluated between cell centres by
/// (multi)linear interpolation. Outside the truncation box it is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<'a> {
    pub partition: &'a Partition,
    pub values: &'a [f64],
}

impl<'a> GridField<'a> {
    pub fn new(partition: &'a Partition, values: &'a [f64]) -> Result<Self> {
        if values.len() != partition.n_cells() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values for {} cells",
                values.len(),
                partition.n_cells()
            )));
        }
        Ok(Self { partition, values })
    }

    pub fn eval(&self, x: &HybridState) -> f64 {
        self.partition
            .interpolation_weights(x)
            .into_iter()
            .map(|(c, w)| w * self.values[c])
            .sum()
    }
}

impl Partition {
    /// Cells and weights of the (multi)linear interpolation between cell
    /// centres at `x`; constant beyond the outermost centres, empty outside
    /// the truncation box.
    pub fn interpolation_weights(&self, x: &HybridState) -> Vec<(usize, f64)> {
        let Some(grid) = self.grids.get(x.q) else {
            return Vec::new();
        };
        let offset = self.offsets[x.q];
        match grid {
            ModeGrid::Atom => vec![(offset, 1.0)],
            ModeGrid::Grid {
                lower,
                upper,
                cells,
            } => {
                let dim = cells.len();
                if x.z.len() != dim || !self.contains(x) {
                    return Vec::new();
                }
                // per axis: base index and weight of the upper neighbour
                let mut base = Vec::with_capacity(dim);
                let mut w = Vec::with_capacity(dim);
                for a in 0..dim {
                    let h = (upper[a] - lower[a]) / cells[a] as f64;
                    let s = (x.z[a] - lower[a]) / h - 0.5;
                    let n = cells[a];
                    if n == 1 || s <= 0.0 {
                        base.push(0);
                        w.push(0.0);
                    } else if s >= (n - 1) as f64 {
                        base.push(n - 1);
                        w.push(0.0);
                    } else {
                        let i = (s.floor() as usize).min(n - 2);
                        base.push(i);
                        w.push(s - i as f64);
                    }
                }
                let mut out = Vec::with_capacity(1 << dim);
                for corner in 0..(1usize << dim) {
                    let mut weight = 1.0;
                    let mut idx = Vec::with_capacity(dim);
                    for a in 0..dim {
                        if corner >> a & 1 == 1 {
                            weight *= w[a];
                            idx.push((base[a] + 1).min(cells[a] - 1));
                        } else {
                            weight *= 1.0 - w[a];
                            idx.push(base[a]);
                        }
                    }
                    if weight != 0.0 {
                        out.push((offset + grid.linear_index(&idx), weight));
                    }
                }
                out
            }
        }
    }
}
