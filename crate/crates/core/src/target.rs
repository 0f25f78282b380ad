//! Closed target sets V containing 0, dense sequences (a_n) in V, and the
//! induction that solves for the lambda-sequence whose orbit of 0 hits
//! each a_n in turn.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::TAU;

use crate::analytic::{forward_tower, inverse_branch_step, orbit_of_zero, BranchPath};
use crate::error::{CoreError, CoreResult};
use crate::numeric::{Eval, NumericContract};

/// Below this modulus a value counts as hitting the puncture of an
/// exponential image; inverse branches lose all accuracy there.
pub const PUNCTURE_MODULUS: f64 = 1e-12;

/// Membership tolerance for points claimed to lie in the target set.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

fn cx(p: [f64; 2]) -> Complex64 {
    Complex64::new(p[0], p[1])
}

/// A building block of a closed target set. Complex parameters are stored
/// as [re, im] pairs to match the on-disk format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Point { point: [f64; 2] },
    Segment { from: [f64; 2], to: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
    Rectangle { corner1: [f64; 2], corner2: [f64; 2] },
}

impl Primitive {
    pub fn distance_to(&self, p: Complex64) -> f64 {
        match self {
            Primitive::Point { point } => (p - cx(*point)).norm(),
            Primitive::Segment { from, to } => {
                let a = cx(*from);
                let b = cx(*to);
                let ab = b - a;
                let len2 = ab.norm_sqr();
                if len2 == 0.0 {
                    return (p - a).norm();
                }
                let t = (((p - a) * ab.conj()).re / len2).clamp(0.0, 1.0);
                (p - (a + ab * t)).norm()
            }
            Primitive::Disk { center, radius } => ((p - cx(*center)).norm() - radius).max(0.0),
            Primitive::Rectangle { corner1, corner2 } => {
                let (x0, x1) = ordered(corner1[0], corner2[0]);
                let (y0, y1) = ordered(corner1[1], corner2[1]);
                let dx = (x0 - p.re).max(0.0).max(p.re - x1);
                let dy = (y0 - p.im).max(0.0).max(p.im - y1);
                dx.hypot(dy)
            }
        }
    }

    /// Largest modulus attained on the primitive.
    fn farthest_from_origin(&self) -> f64 {
        match self {
            Primitive::Point { point } => cx(*point).norm(),
            Primitive::Segment { from, to } => cx(*from).norm().max(cx(*to).norm()),
            Primitive::Disk { center, radius } => cx(*center).norm() + radius,
            Primitive::Rectangle { corner1, corner2 } => {
                let (x0, x1) = ordered(corner1[0], corner2[0]);
                let (y0, y1) = ordered(corner1[1], corner2[1]);
                [(x0, y0), (x0, y1), (x1, y0), (x1, y1)]
                    .iter()
                    .map(|&(x, y)| x.hypot(y))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Points contributed at refinement level `level`: grids at spacing
    /// diam/2^level clipped to the primitive, plus boundary samples for
    /// disks so the rim stays covered.
    fn level_points(&self, level: u32) -> Vec<Complex64> {
        // point streams advance levels without bound; the shift is only
        // meaningful for the subdividing primitives
        let n = 1u64 << level.min(40);
        match self {
            Primitive::Point { point } => vec![cx(*point)],
            Primitive::Segment { from, to } => {
                let a = cx(*from);
                let b = cx(*to);
                if level == 0 {
                    return vec![a, b];
                }
                // only the odd subdivision points are new at this level
                (1..n)
                    .step_by(2)
                    .map(|j| a + (b - a) * (j as f64 / n as f64))
                    .collect()
            }
            Primitive::Disk { center, radius } => {
                let c = cx(*center);
                let r = *radius;
                let mut pts = Vec::new();
                if r > 0.0 {
                    let h = 2.0 * r / n as f64;
                    let imax = (r / h).floor() as i64;
                    for i in -imax..=imax {
                        for j in -imax..=imax {
                            let off = Complex64::new(i as f64 * h, j as f64 * h);
                            if off.norm() <= r {
                                pts.push(c + off);
                            }
                        }
                    }
                    let ring = 4 * n;
                    for j in 0..ring {
                        let theta = TAU * j as f64 / ring as f64;
                        pts.push(c + Complex64::from_polar(r, theta));
                    }
                } else {
                    pts.push(c);
                }
                pts
            }
            Primitive::Rectangle { corner1, corner2 } => {
                let (x0, x1) = ordered(corner1[0], corner2[0]);
                let (y0, y1) = ordered(corner1[1], corner2[1]);
                let mut pts = Vec::new();
                for i in 0..=n {
                    for j in 0..=n {
                        let x = x0 + (x1 - x0) * (i as f64 / n as f64);
                        let y = y0 + (y1 - y0) * (j as f64 / n as f64);
                        pts.push(Complex64::new(x, y));
                    }
                }
                pts
            }
        }
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// A closed target set given as a finite union of primitives; must contain
/// the origin and at least one more point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSetSpec {
    pub primitives: Vec<Primitive>,
}

impl TargetSetSpec {
    pub fn two_points(w: Complex64) -> Self {
        TargetSetSpec {
            primitives: vec![
                Primitive::Point { point: [0.0, 0.0] },
                Primitive::Point { point: [w.re, w.im] },
            ],
        }
    }

    pub fn distance_to(&self, p: Complex64) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> CoreResult<()> {
        if self.primitives.is_empty() {
            return Err(CoreError::EmptyTargetSet);
        }
        if self.distance_to(Complex64::new(0.0, 0.0)) > MEMBERSHIP_TOL {
            return Err(CoreError::MissingOrigin);
        }
        let far = self
            .primitives
            .iter()
            .map(|p| p.farthest_from_origin())
            .fold(0.0, f64::max);
        if far <= PUNCTURE_MODULUS {
            return Err(CoreError::NoSecondPoint);
        }
        Ok(())
    }
}

/// The sequence (a_0, ..., a_N) with a_0 = 0 and a_n != 0 for n >= 1;
/// points may repeat.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSequence {
    pub points: Vec<Complex64>,
}

impl DenseSequence {
    /// Number of nonzero targets (sequence length minus the leading 0).
    pub fn steps(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn validate(&self, spec: &TargetSetSpec) -> CoreResult<()> {
        if self.points.is_empty() || self.points[0] != Complex64::new(0.0, 0.0) {
            return Err(CoreError::Precondition("sequence must start at 0".into()));
        }
        for (index, p) in self.points.iter().enumerate().skip(1) {
            if p.norm() <= PUNCTURE_MODULUS {
                return Err(CoreError::ZeroSequencePoint { index });
            }
            let distance = spec.distance_to(*p);
            if distance > MEMBERSHIP_TOL {
                return Err(CoreError::PointOutsideTarget { index, distance });
            }
        }
        Ok(())
    }
}

struct PrimitiveStream<'a> {
    primitive: &'a Primitive,
    index: usize,
    seed: u64,
    level: u32,
    buffer: VecDeque<Complex64>,
}

impl<'a> PrimitiveStream<'a> {
    fn new(primitive: &'a Primitive, index: usize, seed: u64) -> Self {
        PrimitiveStream { primitive, index, seed, level: 0, buffer: VecDeque::new() }
    }

    fn next_point(&mut self) -> Complex64 {
        while self.buffer.is_empty() {
            let mut batch = self.primitive.level_points(self.level);
            let mix = self
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((self.index as u64) << 32)
                .wrapping_add(self.level as u64);
            batch.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
            self.buffer.extend(batch);
            self.level += 1;
        }
        self.buffer.pop_front().unwrap()
    }
}

/// Draws a_0 = 0 followed by `n` points by round-robin dyadic refinement
/// over the primitives; deterministic given `seed`. Points within the
/// puncture modulus of 0 are skipped (a_n must be nonzero).
pub fn generate_dense_sequence(
    spec: &TargetSetSpec,
    n: usize,
    seed: u64,
) -> CoreResult<DenseSequence> {
    spec.validate()?;
    let mut streams: Vec<PrimitiveStream> = spec
        .primitives
        .iter()
        .enumerate()
        .map(|(i, p)| PrimitiveStream::new(p, i, seed))
        .collect();
    let mut points = vec![Complex64::new(0.0, 0.0)];
    let mut visits = 0usize;
    let visit_cap = 64 * (n + 1) * streams.len() + 1024;
    let mut which = 0usize;
    while points.len() <= n {
        let p = streams[which].next_point();
        which = (which + 1) % streams.len();
        visits += 1;
        if p.norm() > PUNCTURE_MODULUS {
            points.push(p);
        } else if visits > visit_cap {
            return Err(CoreError::NoSecondPoint);
        }
    }
    let seq = DenseSequence { points };
    seq.validate(spec)?;
    Ok(seq)
}

/// The lambda-sequence solving E_(0,k)(0) = a_k, together with the branch
/// indices chosen per step and the forward residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSolution {
    pub lambdas: Vec<Complex64>,
    pub branch_choices: Vec<BranchPath>,
    pub residuals: Vec<f64>,
}

const ESCALATION_ORDER: [i64; 10] = [0, 1, -1, 2, -2, 3, -3, 4, -4, 5];

/// Solves lambda_k = L_{I_{k-1}}(a_k) stage by stage. Branch policy:
/// every stage starts at the principal index and escalates through
/// 1, -1, 2, -2, ... whenever the stage output (or lambda_k itself) would
/// fall within the puncture modulus of 0.
pub fn solve_lambda_sequence(
    contract: &NumericContract,
    seq: &DenseSequence,
) -> CoreResult<LambdaSolution> {
    let mut lambdas: Vec<Complex64> = Vec::new();
    let mut branch_choices = Vec::new();
    for (k, &a_k) in seq.points.iter().enumerate().skip(1) {
        if a_k.norm() <= PUNCTURE_MODULUS {
            return Err(CoreError::ZeroSequencePoint { index: k });
        }
        let mut value = a_k;
        let mut path = Vec::with_capacity(lambdas.len());
        for &lam in lambdas.iter() {
            let principal = inverse_branch_step(contract, lam, 0, value)?;
            let mut chosen = None;
            for (attempt, &idx) in ESCALATION_ORDER.iter().enumerate() {
                let candidate = principal + Complex64::new(0.0, TAU * idx as f64);
                if candidate.norm() > PUNCTURE_MODULUS {
                    chosen = Some((idx, candidate));
                    break;
                }
                let _ = attempt;
            }
            let (idx, next) = chosen.ok_or(CoreError::PunctureCollision {
                index: k,
                attempts: ESCALATION_ORDER.len() - 1,
            })?;
            path.push(idx);
            value = next;
        }
        branch_choices.push(BranchPath(path));
        lambdas.push(value);
    }
    let mut residuals = Vec::with_capacity(lambdas.len());
    for (k, &a_k) in seq.points.iter().enumerate().skip(1) {
        let hit = forward_tower(contract, &lambdas[..k], Complex64::new(0.0, 0.0))?;
        match hit {
            Eval::Value(v) => residuals.push((v - a_k).norm()),
            Eval::Escaped(e) => return Err(CoreError::EscapedValue { stage: e.stage }),
        }
    }
    Ok(LambdaSolution { lambdas, branch_choices, residuals })
}

/// Report of re-running the orbit against the sequence it was solved for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitHitReport {
    pub max_rel_residual: f64,
    pub per_point: Vec<f64>,
    pub pass: bool,
}

pub const ORBIT_HIT_TOL: f64 = 1e-9;

pub fn verify_orbit_hits(
    contract: &NumericContract,
    sol: &LambdaSolution,
    seq: &DenseSequence,
) -> CoreResult<OrbitHitReport> {
    let n = seq.steps().min(sol.lambdas.len());
    let orbit = orbit_of_zero(contract, &sol.lambdas[..n], n)?;
    let mut per_point = Vec::with_capacity(n);
    let mut max_rel = 0.0f64;
    for k in 1..=n {
        let rel = match orbit.points.get(k) {
            Some(p) => (p - seq.points[k]).norm() / seq.points[k].norm().max(1.0),
            None => f64::INFINITY,
        };
        per_point.push(rel);
        max_rel = max_rel.max(rel);
    }
    Ok(OrbitHitReport { max_rel_residual: max_rel, per_point, pass: max_rel <= ORBIT_HIT_TOL })
}
