//! Max-variant Chamfer distance between 6-channel point sets.
//!
//! `A` is the mean distance from each target point to its nearest
//! prediction, `B` the mean distance from each prediction to its nearest
//! target, and the distance is `max(A, B)`. Distances are joint Euclidean
//! norms over position and color. Nearest-neighbor search runs either
//! exhaustively or through [`NnIndex`]; both return identical matches and
//! bit-identical values.

mod kdtree;

pub use kdtree::{NnIndex, DEFAULT_LEAF_SIZE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub type Point6 = [f64; 6];

/// A non-empty set of finite 6-channel points (x, y, z, r, g, b).
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet6D(Vec<Point6>);

impl PointSet6D {
    pub fn new(points: Vec<Point6>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySet);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NaNDetected("point set"));
        }
        Ok(PointSet6D(points))
    }

    pub fn points(&self) -> &[Point6] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<Point6> {
        self.0
    }
}

#[inline]
pub(crate) fn sq_dist(a: &Point6, b: &Point6) -> f64 {
    let mut s = 0.0;
    for k in 0..6 {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NnMethod {
    BruteForce,
    #[default]
    KdTree,
}

impl std::str::FromStr for NnMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" | "bruteforce" | "brute-force" => Ok(NnMethod::BruteForce),
            "kdtree" | "kd-tree" | "tree" => Ok(NnMethod::KdTree),
            _ => Err(Error::Config(format!("unknown nearest-neighbor method `{s}`"))),
        }
    }
}

/// Exhaustive nearest neighbor: (index, squared distance), lowest index on ties.
pub fn brute_nearest(points: &[Point6], query: &Point6) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = sq_dist(query, p);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

/// Mean nearest-neighbor distance from `from` into `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedResult {
    pub value: f64,
    /// For each point of `from`, the index of its nearest point in `to`.
    pub matches: Vec<usize>,
    /// Matched distances, aligned with `matches`.
    pub distances: Vec<f64>,
}

pub fn directed_avg_min(from: &[Point6], to: &[Point6], method: NnMethod) -> Result<DirectedResult> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptySet);
    }
    let nearest: Vec<(usize, f64)> = match method {
        NnMethod::BruteForce => par::map(from, |p| brute_nearest(to, p)),
        NnMethod::KdTree => {
            let index = NnIndex::build(to)?;
            par::map(from, |p| index.query_sq(p))
        }
    };
    let distances: Vec<f64> = nearest.iter().map(|&(_, d2)| d2.sqrt()).collect();
    let value = par::pairwise_sum(&distances) / from.len() as f64;
    Ok(DirectedResult {
        value,
        matches: nearest.into_iter().map(|(i, _)| i).collect(),
        distances,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChamferResult {
    /// `max(A, B)`.
    pub value: f64,
    /// Target -> prediction term.
    pub a: DirectedResult,
    /// Prediction -> target term.
    pub b: DirectedResult,
}

impl ChamferResult {
    pub fn sum(&self) -> f64 {
        self.a.value + self.b.value
    }
}

/// Chamfer distance between `target` and `pred` with the max reduction.
pub fn chamfer_max(target: &[Point6], pred: &[Point6], method: NnMethod) -> Result<ChamferResult> {
    let a = directed_avg_min(target, pred, method)?;
    let b = directed_avg_min(pred, target, method)?;
    Ok(ChamferResult {
        value: a.value.max(b.value),
        a,
        b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// `max(A, B)`.
    #[default]
    Max,
    /// `A + B`, for ablation against the common variant.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxGradient {
    /// Gradient of whichever term is larger; `A` wins ties.
    #[default]
    Selected,
    /// Gradient of the smooth maximum `tau * ln(exp(A/tau) + exp(B/tau))`,
    /// which weights both terms.
    Smoothed { temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChamferConfig {
    pub reduction: Reduction,
    pub max_gradient: MaxGradient,
    pub method: NnMethod,
}

fn unit_term(q: &Point6, p: &Point6, dist: f64, weight: f64, out: &mut Point6) {
    if dist == 0.0 {
        return;
    }
    let s = weight / dist;
    for k in 0..6 {
        out[k] += s * (q[k] - p[k]);
    }
}

fn grad_a(target: &[Point6], pred: &[Point6], r: &ChamferResult, weight: f64, out: &mut [Point6]) {
    let w = weight / target.len() as f64;
    for (i, (&m, &d)) in r.a.matches.iter().zip(&r.a.distances).enumerate() {
        unit_term(&pred[m], &target[i], d, w, &mut out[m]);
    }
}

fn grad_b(target: &[Point6], pred: &[Point6], r: &ChamferResult, weight: f64, out: &mut [Point6]) {
    let w = weight / pred.len() as f64;
    for (i, (&m, &d)) in r.b.matches.iter().zip(&r.b.distances).enumerate() {
        unit_term(&pred[i], &target[m], d, w, &mut out[i]);
    }
}

/// Gradient of `max(A, B)` with respect to every prediction point, using
/// the selected-branch subgradient (`A` on ties, zero for coincident pairs).
pub fn chamfer_grad(target: &[Point6], pred: &[Point6], result: &ChamferResult) -> Vec<Point6> {
    weighted_grad(
        target,
        pred,
        result,
        branch_weights(result, Reduction::Max, MaxGradient::Selected),
    )
}

fn branch_weights(r: &ChamferResult, reduction: Reduction, grad: MaxGradient) -> (f64, f64) {
    match (reduction, grad) {
        (Reduction::Sum, _) => (1.0, 1.0),
        (Reduction::Max, MaxGradient::Selected) => {
            if r.a.value >= r.b.value {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        }
        (Reduction::Max, MaxGradient::Smoothed { temperature }) => {
            let wa = 1.0 / (1.0 + ((r.b.value - r.a.value) / temperature).exp());
            (wa, 1.0 - wa)
        }
    }
}

fn weighted_grad(target: &[Point6], pred: &[Point6], r: &ChamferResult, (wa, wb): (f64, f64)) -> Vec<Point6> {
    let mut out = vec![[0.0; 6]; pred.len()];
    if wa != 0.0 {
        grad_a(target, pred, r, wa, &mut out);
    }
    if wb != 0.0 {
        grad_b(target, pred, r, wb, &mut out);
    }
    out
}

/// Loss value and gradient with respect to `pred` under `config`.
pub fn chamfer_loss(target: &[Point6], pred: &[Point6], config: &ChamferConfig) -> Result<(f64, Vec<Point6>)> {
    let r = chamfer_max(target, pred, config.method)?;
    let value = match config.reduction {
        Reduction::Max => r.value,
        Reduction::Sum => r.sum(),
    };
    let grad = weighted_grad(
        target,
        pred,
        &r,
        branch_weights(&r, config.reduction, config.max_gradient),
    );
    Ok((value, grad))
}
