//! Minimum-cost bipartite assignment and the set loss that supervises memory
//! proposals against ground-truth segments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::metrics::t_iou;
use crate::numerics::{kernels, Graph, Real, Tensor, Var};

/// Matched `(row, column)` pairs and their summed cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Minimum-cost assignment of an `n × m` cost matrix given row-major.
///
/// Rectangular inputs are padded to square with a constant above every real
/// entry; padded pairs are dropped, leaving `min(n, m)` pairs. Shortest
/// augmenting paths with potentials, `O(max(n, m)³)`.
pub fn hungarian(cost: &[f64], n: usize, m: usize) -> Result<Assignment> {
    if cost.len() != n * m {
        return Err(shape_err("hungarian", format!("{} entries for {n}×{m}", cost.len())));
    }
    if let Some(bad) = cost.iter().find(|c| !c.is_finite()) {
        return Err(Error::Argument(format!("cost matrix entry {bad} is not finite")));
    }
    let size = n.max(m);
    if size == 0 || n == 0 || m == 0 {
        return Ok(Assignment { pairs: Vec::new(), cost: 0.0 });
    }
    let pad = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs())) * 2.0 + 1.0;
    let at = |i: usize, j: usize| if i < n && j < m { cost[i * m + j] } else { pad };

    // 1-based potentials and matching, column 0 is the virtual start.
    let mut u = vec![0.0f64; size + 1];
    let mut v = vec![0.0f64; size + 1];
    let mut row_of = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=size)
        .filter_map(|j| {
            let i = row_of[j] - 1;
            (i < n && j - 1 < m).then_some((i, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    let cost = pairs.iter().map(|&(i, j)| cost[i * m + j]).sum();
    Ok(Assignment { pairs, cost })
}

/// Weights of the set loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct SetLossWeights {
    pub class: f64,
    pub l1: f64,
    pub iou: f64,
    /// Multiplier on the no-object cross-entropy of unmatched proposals.
    pub no_object: f64,
}

impl Default for SetLossWeights {
    fn default() -> Self {
        Self {
            class: 1.0,
            l1: 5.0,
            iou: 2.0,
            no_object: 0.1,
        }
    }
}

impl SetLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("class", self.class), ("l1", self.l1), ("iou", self.iou), ("no_object", self.no_object)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(crate::error::config_err(name, "set loss weights must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// A ground-truth segment with its interval normalized to the memory span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentTarget {
    pub class: usize,
    pub center: f64,
    pub width: f64,
}

impl SegmentTarget {
    /// From `[start, end]` within `[0, span]`.
    pub fn from_interval(class: usize, start: f64, end: f64, span: f64) -> Self {
        Self {
            class,
            center: (start + end) / (2.0 * span),
            width: (end - start) / span,
        }
    }

    fn interval(&self) -> (f64, f64) {
        (self.center - self.width / 2.0, self.center + self.width / 2.0)
    }
}

/// Loss value, gradients with respect to the proposal outputs, and the
/// assignment used.
#[derive(Debug, Clone, PartialEq)]
pub struct SetLoss<T> {
    pub value: T,
    pub class_grad: Tensor<T>,
    pub boundary_grad: Tensor<T>,
    pub assignment: Assignment,
}

fn interval(center: f64, width: f64) -> (f64, f64) {
    (center - width / 2.0, center + width / 2.0)
}

/// `1 − tIoU` of a predicted `(center, width)` against a target interval and
/// its partial derivatives in `center` and `width`.
fn iou_loss(center: f64, width: f64, target: (f64, f64)) -> (f64, f64, f64) {
    let (s, e) = interval(center, width);
    let (ts, te) = target;
    let inter = e.min(te) - s.max(ts);
    if inter <= 0.0 {
        return (1.0 - t_iou((s, e), target), 0.0, 0.0);
    }
    let union = (e - s) + (te - ts) - inter;
    if union <= 0.0 {
        return (1.0 - t_iou((s, e), target), 0.0, 0.0);
    }
    let iou = inter / union;
    // d inter / d s and d inter / d e; coinciding endpoints take the mean of
    // the one-sided derivatives, which is zero at an exact match.
    let di_ds = if s > ts { -1.0 } else if s == ts { -0.5 } else { 0.0 };
    let di_de = if e < te { 1.0 } else if e == te { 0.5 } else { 0.0 };
    // d iou / d inter (union also moves with inter) and d iou / d (e − s).
    let dq_di = (union + inter) / (union * union);
    let dq_dlen = -inter / (union * union);
    let dq_ds = dq_di * di_ds - dq_dlen;
    let dq_de = dq_di * di_de + dq_dlen;
    // s = c − w/2, e = c + w/2.
    let dq_dc = dq_ds + dq_de;
    let dq_dw = (dq_de - dq_ds) / 2.0;
    (1.0 - iou, -dq_dc, -dq_dw)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pairwise matching cost between every proposal and every target, row-major
/// `N_m × targets`.
pub fn matching_costs<T: Real>(class_logits: &Tensor<T>, boundaries: &Tensor<T>, targets: &[SegmentTarget], w: &SetLossWeights) -> Vec<f64> {
    let n = class_logits.rows();
    let mut out = Vec::with_capacity(n * targets.len());
    for i in 0..n {
        let logits: Vec<f64> = class_logits.row(i).iter().map(|x| x.as_f64()).collect();
        let p = kernels::softmax(&logits);
        let (c, wd) = (boundaries.at(i, 0).as_f64(), boundaries.at(i, 1).as_f64());
        for t in targets {
            let l1 = (c - t.center).abs() + (wd - t.width).abs();
            let iou = t_iou(interval(c, wd), t.interval());
            out.push(w.class * (1.0 - p[t.class]) + w.l1 * l1 + w.iou * (1.0 - iou));
        }
    }
    out
}

/// Set loss under a given assignment, normalized by `max(1, targets)`.
pub fn set_loss_with_assignment<T: Real>(
    class_logits: &Tensor<T>,
    boundaries: &Tensor<T>,
    targets: &[SegmentTarget],
    w: &SetLossWeights,
    assignment: Assignment,
) -> Result<SetLoss<T>> {
    let (n, k1) = (class_logits.rows(), class_logits.cols());
    if boundaries.rows() != n || boundaries.cols() != 2 || k1 < 2 {
        return Err(shape_err("set loss", format!("logits {:?}, boundaries {:?}", class_logits.shape(), boundaries.shape())));
    }
    let no_object = k1 - 1;
    if let Some(t) = targets.iter().find(|t| t.class >= no_object) {
        return Err(Error::Index {
            what: "segment class",
            index: t.class,
            len: no_object,
        });
    }
    let norm = 1.0 / targets.len().max(1) as f64;
    let mut matched: Vec<Option<usize>> = vec![None; n];
    for &(i, j) in &assignment.pairs {
        matched[i] = Some(j);
    }
    let mut total = 0.0;
    let mut cg = vec![0.0f64; n * k1];
    let mut bg = vec![0.0f64; n * 2];
    for i in 0..n {
        let logits: Vec<f64> = class_logits.row(i).iter().map(|x| x.as_f64()).collect();
        let p = kernels::softmax(&logits);
        let (class, weight) = match matched[i] {
            Some(j) => (targets[j].class, w.class),
            None => (no_object, w.class * w.no_object),
        };
        total += weight * kernels::cross_entropy(&logits, class)? * norm;
        for (c, &pc) in p.iter().enumerate() {
            cg[i * k1 + c] = weight * norm * (pc - if c == class { 1.0 } else { 0.0 });
        }
        if let Some(j) = matched[i] {
            let t = &targets[j];
            let (c, wd) = (boundaries.at(i, 0).as_f64(), boundaries.at(i, 1).as_f64());
            let (dc, dw) = (c - t.center, wd - t.width);
            total += w.l1 * (dc.abs() + dw.abs()) * norm;
            let (li, gc, gw) = iou_loss(c, wd, t.interval());
            total += w.iou * li * norm;
            bg[i * 2] = norm * (w.l1 * sign(dc) + w.iou * gc);
            bg[i * 2 + 1] = norm * (w.l1 * sign(dw) + w.iou * gw);
        }
    }
    let cast = |v: Vec<f64>, r: usize, c: usize| Tensor::matrix(r, c, v.into_iter().map(T::from_f64).collect());
    Ok(SetLoss {
        value: T::from_f64(total),
        class_grad: cast(cg, n, k1),
        boundary_grad: cast(bg, n, 2),
        assignment,
    })
}

/// Hungarian-matched set loss: matched proposals pay class cross-entropy, L1
/// on `(center, width)` and `1 − tIoU`; unmatched ones pay down-weighted
/// no-object cross-entropy.
pub fn segment_set_loss<T: Real>(
    class_logits: &Tensor<T>,
    boundaries: &Tensor<T>,
    targets: &[SegmentTarget],
    w: &SetLossWeights,
) -> Result<SetLoss<T>> {
    let n = class_logits.rows();
    if targets.len() > n {
        return Err(Error::Capacity {
            needed: targets.len(),
            capacity: n,
        });
    }
    let costs = matching_costs(class_logits, boundaries, targets, w);
    let assignment = hungarian(&costs, n, targets.len())?;
    set_loss_with_assignment(class_logits, boundaries, targets, w, assignment)
}

/// Records the set loss on the tape; the assignment is a constant of the
/// backward pass.
pub fn set_loss_graph<T: Real>(
    g: &mut Graph<'_, T>,
    class_logits: Var,
    boundaries: Var,
    targets: &[SegmentTarget],
    w: &SetLossWeights,
) -> Result<(Var, Assignment)> {
    let loss = segment_set_loss(g.value(class_logits), g.value(boundaries), targets, w)?;
    let v = g.precomputed_loss(loss.value, vec![(class_logits, loss.class_grad), (boundaries, loss.boundary_grad)])?;
    Ok((v, loss.assignment))
}
