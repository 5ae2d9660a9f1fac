use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::kernel::CovarianceKernel;
use crate::container;
use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{fnv1a, mix64};
use crate::scalar::Real;

/// Identifier of one field realization; consumers compare ids before
/// combining results computed from "the same" noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RealizationId(pub u64);

/// Evaluation sites collected from every consumer before sampling.
#[derive(Clone, Debug)]
pub struct PointRequest<T> {
    dim: usize,
    steps: Vec<Vec<T>>,
}

impl<T: Real> PointRequest<T> {
    pub fn new(dim: usize, n_steps: usize) -> Self {
        Self { dim, steps: vec![Vec::new(); n_steps] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn declare(&mut self, step: usize, x: &[T]) {
        debug_assert_eq!(x.len(), self.dim);
        self.steps[step].extend_from_slice(x);
    }

    /// Declares a flat block of points (`dim`-strided) at `step`.
    pub fn declare_flat(&mut self, step: usize, xs: &[T]) {
        debug_assert_eq!(xs.len() % self.dim, 0);
        self.steps[step].extend_from_slice(xs);
    }

    /// Declares the same nodes at every step.
    pub fn declare_everywhere(&mut self, nodes: &[T]) {
        for s in &mut self.steps {
            s.extend_from_slice(nodes);
        }
    }

    pub(crate) fn raw(&self, step: usize) -> &[T] {
        &self.steps[step]
    }

    pub fn total_points(&self) -> usize {
        self.steps.iter().map(|s| s.len() / self.dim.max(1)).sum()
    }
}

/// Increments of one step at its (sorted, deduplicated) evaluation points.
#[derive(Clone, Debug, PartialEq)]
pub struct StepField<T> {
    pub(crate) points: Vec<T>,
    pub(crate) values: Vec<T>,
}

const SHIFT_ID_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Spacing `h` of a uniform grid, read off exactly when the grid is already
/// the lattice `j * h` starting at zero.
fn lattice_spacing<T: Real>(grid: &TimeGrid<T>) -> Option<T> {
    let t = grid.times();
    if t[0] == T::zero() && t.iter().enumerate().all(|(j, &s)| s == T::from_usize_lossy(j) * t[1]) {
        return Some(t[1]);
    }
    grid.is_uniform().then(|| (grid.end() - grid.start()) / T::from_usize_lossy(grid.steps()))
}

fn lattice<T: Real>(h: T, n: usize) -> Result<TimeGrid<T>> {
    TimeGrid::new((0..=n).map(|j| T::from_usize_lossy(j) * h).collect())
}

pub(crate) fn lex_cmp<T: Real>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) => continue,
            Some(o) => return o,
            None => return Ordering::Equal,
        }
    }
    Ordering::Equal
}

impl<T: Real> StepField<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Index of the stored point within `tol` (max-norm) of `x`.
    pub fn locate(&self, x: &[T], tol: T) -> Option<usize> {
        let d = x.len();
        let n = self.values.len();
        if d == 0 || n == 0 {
            return None;
        }
        let pt = |i: usize| &self.points[i * d..(i + 1) * d];
        let lo = x[0] - tol;
        let first = partition(n, |i| pt(i)[0] < lo);
        (first..n)
            .take_while(|&i| pt(i)[0] <= x[0] + tol)
            .find(|&i| pt(i).iter().zip(x).all(|(a, b)| (*a - *b).abs() <= tol))
    }
}

fn partition(n: usize, mut pred: impl FnMut(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// One sampled path of the martingale field at declared points.
///
/// Immutable once built; any number of readers may share it.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldRealization<T> {
    pub(crate) kernel: CovarianceKernel<T>,
    pub(crate) grid: TimeGrid<T>,
    pub(crate) dim: usize,
    pub(crate) seed: u64,
    pub(crate) id: RealizationId,
    pub(crate) steps: Vec<StepField<T>>,
    pub(crate) max_jitter: T,
    pub(crate) dedup_tol: T,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct Header<T> {
    kind: String,
    kernel: CovarianceKernel<T>,
    grid: Vec<T>,
    dim: usize,
    seed: u64,
    id: u64,
    point_counts: Vec<usize>,
    max_jitter: T,
    dedup_tol: T,
}

impl<T: Real> FieldRealization<T> {
    pub fn kernel(&self) -> &CovarianceKernel<T> {
        &self.kernel
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> RealizationId {
        self.id
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, k: usize) -> &StepField<T> {
        &self.steps[k]
    }

    /// Largest relative diagonal jitter any step needed.
    pub fn max_jitter(&self) -> T {
        self.max_jitter
    }

    /// `Delta B_k(x)`; `x` must have been declared for step `k`.
    pub fn evaluate_increment(&self, k: usize, x: &[T]) -> Result<T> {
        if k >= self.steps.len() {
            return Err(invalid(format!("step {k} beyond realization with {} steps", self.steps.len())));
        }
        if x.len() != self.dim {
            return Err(invalid("evaluation point has wrong dimension"));
        }
        self.steps[k]
            .locate(x, self.dedup_tol)
            .map(|i| self.steps[k].values[i])
            .ok_or_else(|| Error::MissingPoint { step: k, point: x.iter().map(|v| v.as_f64()).collect() })
    }

    /// `Delta B_k` at every point of the flat list `xs`; same matching as
    /// [`Self::evaluate_increment`], by one sweep over the sorted queries in
    /// one dimension.
    pub fn evaluate_increments(&self, k: usize, xs: &[T]) -> Result<Vec<T>> {
        let d = self.dim;
        if d != 1 || k >= self.steps.len() {
            return xs.chunks(d.max(1)).map(|x| self.evaluate_increment(k, x)).collect();
        }
        let step = &self.steps[k];
        let (pts, tol) = (&step.points, self.dedup_tol);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
        let mut out = vec![T::zero(); xs.len()];
        let mut first = 0;
        for &q in &order {
            let x = xs[q];
            while first < pts.len() && pts[first] < x - tol {
                first += 1;
            }
            let hit = (first..pts.len()).take_while(|&i| pts[i] <= x + tol).find(|&i| (pts[i] - x).abs() <= tol);
            match hit {
                Some(i) => out[q] = step.values[i],
                None => return Err(Error::MissingPoint { step: k, point: vec![x.as_f64()] }),
            }
        }
        Ok(out)
    }

    /// `sum_k Delta B_k(x)` over steps `from..to`; `x` declared at each of them.
    pub fn accumulate(&self, x: &[T], from: usize, to: usize) -> Result<T> {
        (from..to).map(|k| self.evaluate_increment(k, x)).sum()
    }

    /// Per-step covariance `Q_k(x, y) = q(t_k, x, y) * dt_k` (left-endpoint rule).
    #[inline]
    pub fn step_covariance(&self, k: usize, x: &[T], y: &[T]) -> T {
        self.kernel.eval_unchecked(self.grid.time(k), x, y) * self.grid.dt(k)
    }

    /// Steps `from..to` as a realization on the sub-grid `t_from..=t_to`.
    /// Absolute times are kept.
    pub fn window(&self, from: usize, to: usize) -> Result<Self> {
        if to > self.steps.len() || to <= from {
            return Err(invalid(format!("window {from}..{to} out of range")));
        }
        let grid = self.grid.slice(from, to)?;
        Ok(Self {
            kernel: self.kernel.clone(),
            grid,
            dim: self.dim,
            seed: self.seed,
            id: RealizationId(mix64(self.id.0 ^ mix64((from as u64) << 32 | to as u64))),
            steps: self.steps[from..to].to_vec(),
            max_jitter: self.max_jitter,
            dedup_tol: self.dedup_tol,
        })
    }

    /// Realization of the re-indexed field whose step `j` is this field's
    /// step `from + j`, with the grid translated so it starts at zero.
    /// Uniform grids are rebuilt on the lattice `j * h` and ids advance
    /// additively, so composing two shifts equals one combined shift
    /// bit for bit.
    pub(crate) fn reindexed(&self, from: usize) -> Result<Self> {
        if from == 0 {
            return Ok(self.clone());
        }
        if from >= self.steps.len() {
            return Err(invalid("shift leaves no steps"));
        }
        let n = self.steps.len() - from;
        let grid = match lattice_spacing(&self.grid) {
            Some(h) => lattice(h, n)?,
            None => {
                let offset = self.grid.time(from);
                TimeGrid::new(self.grid.times()[from..].iter().map(|&t| t - offset).collect())?
            }
        };
        Ok(Self {
            kernel: self.kernel.clone(),
            grid,
            dim: self.dim,
            seed: self.seed,
            id: RealizationId(self.id.0.wrapping_add((from as u64).wrapping_mul(SHIFT_ID_STRIDE))),
            steps: self.steps[from..].to_vec(),
            max_jitter: self.max_jitter,
            dedup_tol: self.dedup_tol,
        })
    }

    /// Time reversal of steps `from..to` anchored at the right end: step `k`
    /// of the result carries `-Delta B_{to-1-k}`, the increment of
    /// `s -> B(t_to - s) - B(t_to)`.
    pub(crate) fn reversed(&self, from: usize, to: usize) -> Result<Self> {
        if to <= from || to > self.steps.len() {
            return Err(invalid(format!("reversal window {from}..{to} out of range")));
        }
        let grid = match lattice_spacing(&self.grid) {
            Some(h) => lattice(h, to - from)?,
            None => {
                let end = self.grid.time(to);
                TimeGrid::new(self.grid.times()[from..=to].iter().rev().map(|&t| end - t).collect())?
            }
        };
        let steps = (from..to)
            .rev()
            .map(|k| {
                let mut s = self.steps[k].clone();
                s.values.iter_mut().for_each(|v| *v = -*v);
                s
            })
            .collect();
        Ok(Self {
            kernel: self.kernel.clone(),
            grid,
            dim: self.dim,
            seed: self.seed,
            id: RealizationId(mix64(self.id.0 ^ mix64(0x5245_5645 ^ ((from as u64) << 32 | to as u64)))),
            steps,
            max_jitter: self.max_jitter,
            dedup_tol: self.dedup_tol,
        })
    }

    /// Realization on the grid `factor` times coarser: coarse step `j`
    /// carries `sum_r Delta B_{j*factor + r}(x)` at every point declared in
    /// all of its sub-steps. Sampling on the fine grid first and summing
    /// gives coupled coarse and fine noise for convergence studies.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        let n = self.steps.len();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(invalid("coarsening factor must divide the step count"));
        }
        let d = self.dim;
        let nc = n / factor;
        let mut steps = Vec::with_capacity(nc);
        for j in 0..nc {
            let head = &self.steps[j * factor];
            let mut points = Vec::new();
            let mut values = Vec::new();
            'pt: for i in 0..head.len() {
                let x = &head.points[i * d..(i + 1) * d];
                let mut v = head.values[i];
                for r in 1..factor {
                    match self.steps[j * factor + r].locate(x, self.dedup_tol) {
                        Some(l) => v += self.steps[j * factor + r].values[l],
                        None => continue 'pt,
                    }
                }
                points.extend_from_slice(x);
                values.push(v);
            }
            steps.push(StepField { points, values });
        }
        let times: Vec<T> = (0..=nc).map(|j| self.grid.time(j * factor)).collect();
        Ok(Self {
            kernel: self.kernel.clone(),
            grid: TimeGrid::new(times)?,
            dim: d,
            seed: self.seed,
            id: RealizationId(mix64(self.id.0 ^ mix64(0xc0a5 ^ factor as u64))),
            steps,
            max_jitter: self.max_jitter,
            dedup_tol: self.dedup_tol,
        })
    }

    fn header(&self) -> Header<T> {
        Header {
            kind: "field_realization".into(),
            kernel: self.kernel.clone(),
            grid: self.grid.times().to_vec(),
            dim: self.dim,
            seed: self.seed,
            id: self.id.0,
            point_counts: self.steps.iter().map(StepField::len).collect(),
            max_jitter: self.max_jitter,
            dedup_tol: self.dedup_tol,
        }
    }

    /// Binary container: JSON header, then per step the point coordinates
    /// followed by the increments (step-major, point-minor).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_value(self.header())?;
        let total: usize = self.steps.iter().map(|s| s.points.len() + s.values.len()).sum();
        let mut payload = Vec::with_capacity(total);
        for s in &self.steps {
            payload.extend(s.points.iter().map(|v| v.as_f64()));
            payload.extend(s.values.iter().map(|v| v.as_f64()));
        }
        container::to_bytes(&header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::read_container(bytes)?;
        container::expect_kind(&header, "field_realization")?;
        let h: Header<T> = serde_json::from_value(header)?;
        let grid = TimeGrid::new(h.grid)?;
        if h.point_counts.len() != grid.steps() {
            return Err(Error::Format("point counts do not match grid".into()));
        }
        let mut steps = Vec::with_capacity(h.point_counts.len());
        let mut at = 0usize;
        for &c in &h.point_counts {
            let np = c * h.dim;
            if at + np + c > payload.len() {
                return Err(Error::Format("payload truncated".into()));
            }
            let points = payload[at..at + np].iter().map(|&v| T::lit(v)).collect();
            let values = payload[at + np..at + np + c].iter().map(|&v| T::lit(v)).collect();
            at += np + c;
            steps.push(StepField { points, values });
        }
        if at != payload.len() {
            return Err(Error::Format("trailing payload".into()));
        }
        Ok(Self {
            kernel: h.kernel,
            grid,
            dim: h.dim,
            seed: h.seed,
            id: RealizationId(h.id),
            steps,
            max_jitter: h.max_jitter,
            dedup_tol: h.dedup_tol,
        })
    }

    pub(crate) fn compute_id(kernel: &CovarianceKernel<T>, grid: &TimeGrid<T>, seed: u64, counts: &[usize]) -> RealizationId {
        let head = json!({"kernel": kernel, "grid": grid.times(), "seed": seed, "counts": counts});
        RealizationId(mix64(fnv1a(head.to_string().as_bytes())))
    }
}
