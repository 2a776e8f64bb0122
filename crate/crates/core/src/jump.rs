//! Piecewise-`S¹` limit objects: a finite jump set plus a phase that is
//! `H¹` on each complementary subinterval.


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::params::wrap_angle;

/// Phase gap (mod 2π) below which a jump is considered removable.
pub const JUMP_TOL: f64 = 1e-6;

/// Phase samples of one maximal subinterval between consecutive jump points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePiece {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
}

impl PhasePiece {
    fn left_trace(&self, at: f64) -> f64 {
        extrapolate(&self.x, &self.theta, at, true)
    }

    fn right_trace(&self, at: f64) -> f64 {
        extrapolate(&self.x, &self.theta, at, false)
    }

    fn value_at(&self, at: f64) -> f64 {
        let x = &self.x;
        if x.len() == 1 {
            return self.theta[0];
        }
        if at <= x[0] {
            return self.left_trace(at);
        }
        if at >= x[x.len() - 1] {
            return self.right_trace(at);
        }
        let k = x.partition_point(|&v| v <= at) - 1;
        let t = (at - x[k]) / (x[k + 1] - x[k]);
        self.theta[k] + t * (self.theta[k + 1] - self.theta[k])
    }
}

/// Linear extrapolation from the first (`front`) or last two samples.
fn extrapolate(x: &[f64], theta: &[f64], at: f64, front: bool) -> f64 {
    let m = x.len();
    if m == 1 {
        return theta[0];
    }
    let (i, j) = if front { (0, 1) } else { (m - 2, m - 1) };
    let slope = (theta[j] - theta[i]) / (x[j] - x[i]);
    let base = if front { i } else { j };
    theta[base] + slope * (at - x[base])
}

#[derive(Deserialize)]
struct RawJumpMap {
    jumps: Vec<f64>,
    pieces: Vec<PhasePiece>,
    alpha: f64,
    #[serde(default)]
    twist: f64,
}

impl TryFrom<RawJumpMap> for JumpMap {
    type Error = Error;

    fn try_from(raw: RawJumpMap) -> Result<Self> {
        JumpMap::new(raw.jumps, raw.pieces, raw.alpha, raw.twist)
    }
}

/// Argument of the limit functional.
///
/// `jumps` may contain 0 and 1; they are present exactly when the phase
/// traces violate the boundary data. `twist` records `N` or `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJumpMap")]
pub struct JumpMap {
    jumps: Vec<f64>,
    pieces: Vec<PhasePiece>,
    alpha: f64,
    twist: f64,
}

impl JumpMap {
    /// Validates and normalizes: removable interior jumps are merged and the
    /// endpoint jumps are recomputed from the traces. Caller-supplied 0/1
    /// entries only delimit pieces.
    pub fn new(jumps: Vec<f64>, pieces: Vec<PhasePiece>, alpha: f64, twist: f64) -> Result<Self> {
        if jumps.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidJumpMap("jump outside [0, 1]".into()));
        }
        if jumps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidJumpMap("jumps must be sorted and distinct".into()));
        }
        let interior: Vec<f64> = jumps.iter().copied().filter(|&x| x > 0.0 && x < 1.0).collect();
        if pieces.len() != interior.len() + 1 {
            return Err(Error::InvalidJumpMap(format!(
                "{} interior jumps need {} pieces, got {}",
                interior.len(),
                interior.len() + 1,
                pieces.len()
            )));
        }
        let mut bounds = Vec::with_capacity(interior.len() + 2);
        bounds.push(0.0);
        bounds.extend(&interior);
        bounds.push(1.0);
        for (k, p) in pieces.iter().enumerate() {
            if p.x.is_empty() || p.x.len() != p.theta.len() {
                return Err(Error::InvalidJumpMap(format!("piece {k} is empty or ragged")));
            }
            if p.x.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidJumpMap(format!("piece {k} nodes not increasing")));
            }
            if p.theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::InvalidJumpMap(format!("piece {k} has non-finite phase")));
            }
            let (a, b) = (bounds[k], bounds[k + 1]);
            if p.x[0] < a || p.x[p.x.len() - 1] > b {
                return Err(Error::InvalidJumpMap(format!("piece {k} leaves [{a}, {b}]")));
            }
        }

        let mut kept_jumps = Vec::new();
        let mut merged: Vec<PhasePiece> = vec![pieces[0].clone()];
        for (k, &xj) in interior.iter().enumerate() {
            let mut next = pieces[k + 1].clone();
            let last = merged.last_mut().expect("nonempty");
            let left = last.right_trace(xj);
            let right = next.left_trace(xj);
            let gap = wrap_angle(right - left);
            if gap.abs() < JUMP_TOL {
                let shift = left + gap - right;
                last.x.append(&mut next.x);
                last.theta.extend(next.theta.iter().map(|t| t + shift));
            } else {
                kept_jumps.push(xj);
                merged.push(next);
            }
        }

        let first = &merged[0];
        let last = &merged[merged.len() - 1];
        let mut all = Vec::with_capacity(kept_jumps.len() + 2);
        if wrap_angle(first.left_trace(0.0)).abs() > JUMP_TOL {
            all.push(0.0);
        }
        all.extend(kept_jumps);
        if wrap_angle(last.right_trace(1.0) - alpha).abs() > JUMP_TOL {
            all.push(1.0);
        }
        Ok(Self {
            jumps: all,
            pieces: merged,
            alpha,
            twist,
        })
    }

    /// Continuous phase `θ(x)` on the grid, no jumps.
    pub fn no_jump(grid: &Grid, alpha: f64, twist: f64, theta: impl Fn(f64) -> f64) -> Result<Self> {
        let x: Vec<f64> = grid.nodes().collect();
        let theta = x.iter().map(|&x| theta(x)).collect();
        Self::new(vec![], vec![PhasePiece { x, theta }], alpha, twist)
    }

    /// Twist `rate` on both sides of a single jump at `x0`; the right branch is
    /// `rate·x + α − rate`, so the boundary data hold at both ends.
    pub fn one_jump(grid: &Grid, x0: f64, rate: f64, alpha: f64, twist: f64) -> Result<Self> {
        if !(x0 > 0.0 && x0 < 1.0) {
            return Err(Error::InvalidJumpMap(format!("jump location {x0} not interior")));
        }
        let mut left = PhasePiece { x: vec![], theta: vec![] };
        let mut right = PhasePiece { x: vec![], theta: vec![] };
        for x in grid.nodes() {
            if x < x0 {
                left.x.push(x);
                left.theta.push(rate * x);
            } else if x > x0 {
                right.x.push(x);
                right.theta.push(rate * x + alpha - rate);
            }
        }
        Self::new(vec![x0], vec![left, right], alpha, twist)
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    /// Jumps strictly inside `(0, 1)`.
    pub fn interior_jumps(&self) -> Vec<f64> {
        self.jumps.iter().copied().filter(|&x| x > 0.0 && x < 1.0).collect()
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    pub fn pieces(&self) -> &[PhasePiece] {
        &self.pieces
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn twist(&self) -> f64 {
        self.twist
    }

    /// Phase at `x`, interpolated within its piece and linearly extended up to
    /// the bounding jumps. At an interior jump point the left piece is used.
    pub fn phase_at(&self, x: f64) -> f64 {
        let interior = self.interior_jumps();
        let k = interior.partition_point(|&j| j < x);
        self.pieces[k].value_at(x)
    }

    /// Phase on the right of an interior jump (the left value is `phase_at`).
    pub fn phase_right_of(&self, x: f64) -> f64 {
        let interior = self.interior_jumps();
        let k = interior.partition_point(|&j| j <= x);
        self.pieces[k].value_at(x)
    }

    /// `L/2 Σ ∫ (θ′ − target)²` over pieces, without the jump term.
    ///
    /// The cell rule runs over consecutive samples; end slopes extend each
    /// piece to its bounding jumps.
    pub fn twist_energy(&self, l: f64, target: f64) -> Result<f64> {
        let interior = self.interior_jumps();
        let mut total = 0.0;
        for (k, p) in self.pieces.iter().enumerate() {
            if p.x.len() < 2 {
                return Err(Error::InvalidJumpMap(format!(
                    "piece {k} has {} sample(s); need at least 2",
                    p.x.len()
                )));
            }
            let a = if k == 0 { 0.0 } else { interior[k - 1] };
            let b = if k == interior.len() { 1.0 } else { interior[k] };
            let m = p.x.len();
            let mut acc = 0.0;
            for w in 0..m - 1 {
                let dx = p.x[w + 1] - p.x[w];
                let s = (p.theta[w + 1] - p.theta[w]) / dx - target;
                acc += s * s * dx;
                if w == 0 {
                    acc += s * s * (p.x[0] - a);
                }
                if w == m - 2 {
                    acc += s * s * (b - p.x[m - 1]);
                }
            }
            total += acc;
        }
        Ok(0.5 * l * total)
    }
}

/// Cost of one modulus transition `1 → 0 → 1`.
pub const JUMP_COST: f64 = 2.0 * std::f64::consts::SQRT_2 / 3.0;

/// Limit energy `E₀` (or `E_{0,A}` with `target = 2πA`).
pub fn energy_gamma(j: &JumpMap, l: f64, target: f64) -> Result<f64> {
    Ok(j.twist_energy(l, target)? + JUMP_COST * j.jump_count() as f64)
}
