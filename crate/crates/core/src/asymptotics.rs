//! Closed-form limit predictions, recovery sequences, profile fits and
//! extrapolation in ε.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, PolarField};
use crate::jump::{JumpMap, JUMP_COST};
use crate::lifting::{extract_jump_map, CLASSIFY_Q};
use crate::minimize::{multistart_all, select_best, SolverOptions, Strategy};
use crate::params::ModelParams;

/// Energies within this distance are reported as a tie.
pub const CLASS_TIE_TOL: f64 = 1e-12;

/// Limit-problem minimizer type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    /// Constant twist, winding `N` (or `⌊ε^{-β}⌋`).
    NoJumpAtN,
    NoJumpAtNminus1,
    /// Only reachable with a fractional twist `A > 0`.
    NoJumpAtNplus1,
    OneJumpFamily,
    Tie,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::NoJumpAtN => "NoJumpAtN",
            Kind::NoJumpAtNminus1 => "NoJumpAtNminus1",
            Kind::NoJumpAtNplus1 => "NoJumpAtNplus1",
            Kind::OneJumpFamily => "OneJumpFamily",
            Kind::Tie => "Tie",
        }
    }

    fn no_jump(k: i64) -> Self {
        match k {
            -1 => Kind::NoJumpAtNminus1,
            0 => Kind::NoJumpAtN,
            1 => Kind::NoJumpAtNplus1,
            _ => unreachable!("relative winding outside -1..=1"),
        }
    }

    /// Relative winding `M − N` of a no-jump kind.
    pub fn relative_winding(&self) -> Option<i64> {
        match self {
            Kind::NoJumpAtNminus1 => Some(-1),
            Kind::NoJumpAtN => Some(0),
            Kind::NoJumpAtNplus1 => Some(1),
            _ => None,
        }
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub kind: Kind,
    pub predicted_energy: f64,
    /// Euclidean distance in the `(L, α)` plane to the nearest switch of the
    /// minimizing branch; always nonnegative.
    pub boundary_distance: f64,
    /// The tied kinds when `kind` is `Tie`.
    pub alternatives: Vec<Kind>,
    /// `A − α/2π` sits exactly halfway between two integers.
    pub nearest_integer_tie: bool,
}

/// `(L/2)(2π(k − A) + α)²`.
fn branch_energy(l: f64, alpha: f64, a: f64, k: i64) -> f64 {
    0.5 * l * (2.0 * PI * (k as f64 - a) + alpha).powi(2)
}

/// Minimizers of the limit energy with integer preferred twist.
pub fn classify_e0(l: f64, alpha: f64) -> Classification {
    classify_e0a(l, alpha, 0.0)
}

/// Minimizers of the limit energy with fractional twist `A`.
pub fn classify_e0a(l: f64, alpha: f64, a: f64) -> Classification {
    let mut branches: Vec<(Kind, f64)> = (-1..=1)
        .map(|k| (Kind::no_jump(k), branch_energy(l, alpha, a, k)))
        .collect();
    branches.push((Kind::OneJumpFamily, JUMP_COST));
    branches.sort_by(|x, y| x.1.total_cmp(&y.1));
    let (best, second) = (branches[0], branches[1]);
    let (kind, alternatives) = if second.1 - best.1 <= CLASS_TIE_TOL {
        (Kind::Tie, vec![best.0, second.0])
    } else {
        (best.0, vec![])
    };
    let r = a - alpha / (2.0 * PI);
    let nearest_integer_tie = ((r - r.floor()) - 0.5).abs() < CLASS_TIE_TOL;
    Classification {
        kind,
        predicted_energy: best.1,
        boundary_distance: boundary_distance(l, alpha, a),
        alternatives,
        nearest_integer_tie,
    }
}

/// Distance from `(l, alpha)` to the set where the two lowest limit branches
/// exchange order.
///
/// The set consists of the curves `L = 2·JUMP_COST / (2π(k − A) + α)²` with
/// `k` the nearest no-jump branch, and vertical segments at the `α` where two
/// no-jump branches are equal and lie below the jump cost.
fn boundary_distance(l: f64, alpha: f64, a: f64) -> f64 {
    let curve = |al: f64| -> Option<f64> {
        let k = (a - al / (2.0 * PI)).round();
        let d = 2.0 * PI * (k - a) + al;
        (d.abs() > 1e-12).then(|| 2.0 * JUMP_COST / (d * d))
    };
    let dist = |al: f64| curve(al).map_or(f64::INFINITY, |lc| (l - lc).hypot(alpha - al));
    let steps = 6284;
    let da = 2.0 * PI / steps as f64;
    let (mut best_i, mut best) = (0usize, f64::INFINITY);
    for i in 0..=steps {
        let d = dist(i as f64 * da);
        if d < best {
            best = d;
            best_i = i;
        }
    }
    let lo = (best_i as f64 - 1.0) * da;
    let hi = (best_i as f64 + 1.0) * da;
    let (_, fx) = golden_min(|al| dist(al.clamp(0.0, 2.0 * PI)), lo, hi, 1e-12);
    best = best.min(fx);

    let lmax = 2.0 * JUMP_COST / (PI * PI);
    for k in -2..=2 {
        let ab = PI * (1.0 - 2.0 * k as f64) + 2.0 * PI * a;
        if !(0.0..=2.0 * PI).contains(&ab) {
            continue;
        }
        let d = if l <= lmax {
            (alpha - ab).abs()
        } else {
            (l - lmax).hypot(alpha - ab)
        };
        best = best.min(d);
    }
    best
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// `(L/2)(2πM + α − 2πN)²`, the limit energy of the class-`M` local minimizer.
pub fn predicted_local_energy(m: i64, params: &ModelParams) -> f64 {
    0.5 * params.l * (2.0 * PI * m as f64 + params.alpha - params.target_rate()).powi(2)
}

/// `2π²L(N − M − α/2π)² + 2√2/3`, the limit mountain-pass value out of class `M`.
pub fn predicted_saddle_energy(m: i64, params: &ModelParams) -> f64 {
    2.0 * PI * PI * params.l * (params.preferred_twist() - m as f64 - params.alpha / (2.0 * PI)).powi(2)
        + JUMP_COST
}

/// One modulus transition of a recovery field: `ρ ≡ 0` on
/// `(center − half_width, center + half_width)`, tanh ramps of width `√ε`
/// on either side, and the phase switching at `center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub center: f64,
    pub half_width: f64,
    /// Phase left of `center` for boundary transitions at `x = 0` (`Some(0)`)
    /// or right of it for `x = 1` (`Some(α)`).
    pub boundary_phase: Option<f64>,
}

/// Closed-form recovery profile for a jump map.
#[derive(Clone, Debug)]
pub struct RecoveryProfile {
    jumps: JumpMap,
    eps: f64,
    transitions: Vec<Transition>,
}

impl RecoveryProfile {
    pub fn new(j: &JumpMap, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
        }
        let se = eps.sqrt();
        let e2 = eps * eps;
        let mut transitions = Vec::new();
        for &x in j.jumps() {
            let t = if x == 0.0 {
                Transition {
                    center: se + 0.5 * e2,
                    half_width: 0.5 * e2,
                    boundary_phase: Some(0.0),
                }
            } else if x == 1.0 {
                Transition {
                    center: 1.0 - se - 0.5 * e2,
                    half_width: 0.5 * e2,
                    boundary_phase: Some(j.alpha()),
                }
            } else {
                Transition {
                    center: x,
                    half_width: e2,
                    boundary_phase: None,
                }
            };
            transitions.push(t);
        }
        let interior = j.interior_jumps();
        for w in interior.windows(2) {
            if w[1] - w[0] < 4.0 * se {
                return Err(Error::Overlap(format!(
                    "jumps at {} and {} are closer than 4√ε = {}",
                    w[0],
                    w[1],
                    4.0 * se
                )));
            }
        }
        for w in transitions.windows(2) {
            let reach = |t: &Transition| se + t.half_width;
            if w[1].center - w[0].center < reach(&w[0]) + reach(&w[1]) {
                return Err(Error::Overlap(format!(
                    "transitions at {} and {} overlap",
                    w[0].center, w[1].center
                )));
            }
        }
        for t in transitions.iter().filter(|t| t.boundary_phase.is_none()) {
            if t.center < se + t.half_width || t.center > 1.0 - se - t.half_width {
                return Err(Error::Overlap(format!(
                    "jump at {} is within √ε of the boundary",
                    t.center
                )));
            }
        }
        Ok(Self {
            jumps: j.clone(),
            eps,
            transitions,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Normalized half-layer `tanh(s/(√2ε)) / tanh(√ε/(√2ε))` for `s ∈ [0, √ε]`.
    fn ramp(&self, s: f64) -> (f64, f64) {
        let k = SQRT_2 * self.eps;
        let norm = (self.eps.sqrt() / k).tanh();
        let th = (s / k).tanh();
        (th / norm, (1.0 - th * th) / (k * norm))
    }

    /// `(ρ, ρ′)` at `x`.
    pub fn modulus(&self, x: f64) -> (f64, f64) {
        let se = self.eps.sqrt();
        for t in &self.transitions {
            let d = x - t.center;
            let s = d.abs() - t.half_width;
            if s <= 0.0 {
                return (0.0, 0.0);
            }
            if s < se {
                let (r, dr) = self.ramp(s);
                return (r, dr * d.signum());
            }
        }
        (1.0, 0.0)
    }

    /// Phase at `x`, switching at each transition center.
    pub fn phase(&self, x: f64) -> f64 {
        for t in &self.transitions {
            if let Some(p) = t.boundary_phase {
                let on_boundary_side = if t.center < 0.5 { x < t.center } else { x > t.center };
                if on_boundary_side {
                    return p;
                }
            }
        }
        let interior = self.jumps.interior_jumps();
        if interior.iter().any(|&j| j == x) {
            return self.jumps.phase_right_of(x);
        }
        self.jumps.phase_at(x)
    }

    /// Samples the profile; only the tanh layers need resolving (`h ≤ ε/2`).
    pub fn sample(&self, grid: Grid) -> Result<ComplexField> {
        if grid.h() > 0.5 * self.eps {
            return Err(Error::Resolution(format!(
                "h = {} does not resolve transition layers of width ε = {}",
                grid.h(),
                self.eps
            )));
        }
        ComplexField::from_fn(grid, self.jumps.alpha(), |x| {
            let r = self.modulus(x).0;
            let t = self.phase(x);
            [r * t.cos(), r * t.sin()]
        })
    }

    /// `∫ ε/2 ρ′² + (ρ² − 1)²/(4ε)` across one transition, by adaptive quadrature.
    pub fn layer_cost(&self, index: usize) -> f64 {
        let t = self.transitions[index];
        let se = self.eps.sqrt();
        let eps = self.eps;
        let density = |x: f64| {
            let (r, dr) = self.modulus(x);
            0.5 * eps * dr * dr + (r * r - 1.0).powi(2) / (4.0 * eps)
        };
        let reach = se + t.half_width;
        let pieces = [
            (t.center - reach, t.center - t.half_width),
            (t.center - t.half_width, t.center + t.half_width),
            (t.center + t.half_width, t.center + reach),
        ];
        pieces
            .iter()
            .map(|&(a, b)| adaptive_simpson(&density, a, b, 1e-13, 50))
            .sum()
    }
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Continuum cost of one interior transition: two tanh half-layers plus the
/// zero plateau.
pub fn transition_layer_cost(eps: f64) -> f64 {
    let g = crate::field::make_grid(11).expect("valid grid");
    let j = JumpMap::one_jump(&g, 0.5, 1.0, 0.0, 0.0).expect("interior jump");
    RecoveryProfile::new(&j, eps)
        .map(|p| p.layer_cost(0))
        .unwrap_or(f64::NAN)
}

/// Recovery field of the limit object `j`, fully resolving the zero plateau.
pub fn build_recovery_sequence(j: &JumpMap, eps: f64, grid: Grid) -> Result<ComplexField> {
    let profile = RecoveryProfile::new(j, eps)?;
    if j.jump_count() > 0 && grid.h() >= 0.25 * eps * eps {
        return Err(Error::Resolution(format!(
            "h = {} must be below ε²/4 = {}",
            grid.h(),
            0.25 * eps * eps
        )));
    }
    ComplexField::from_fn(grid, j.alpha(), |x| {
        let r = profile.modulus(x).0;
        let t = profile.phase(x);
        [r * t.cos(), r * t.sin()]
    })
}

/// Discrete constant `C` of the first integral for a given modulus: the
/// value making the predicted `θ′` integrate to `2πM + α`.
pub fn predicted_flux_constant(rho: &[f64], m: i64, params: &ModelParams, h: f64) -> Result<f64> {
    let (eps, l) = (params.eps, params.l);
    let tau = params.target_rate();
    let (mut s1, mut s2) = (0.0, 0.0);
    for w in rho.windows(2) {
        let r2 = w[0] * w[1];
        if !(r2 > 0.0) {
            return Err(Error::InvalidField("modulus vanishes; θ′ profile undefined".into()));
        }
        s1 += h / (l * r2 + eps);
        s2 += h / (l * r2 * r2 + eps * r2);
    }
    Ok((2.0 * PI * m as f64 + params.alpha - tau * l * s1) / s2)
}

/// Cell values of `(2πNLρ² + C)/(Lρ⁴ + ερ²)` with `ρ² = ρ_i ρ_{i+1}`.
pub fn theta_profile_for_constant(rho: &[f64], c: f64, params: &ModelParams) -> Vec<f64> {
    let (eps, l) = (params.eps, params.l);
    let tau = params.target_rate();
    rho.windows(2)
        .map(|w| {
            let r2 = w[0] * w[1];
            (tau * l * r2 + c) / (l * r2 * r2 + eps * r2)
        })
        .collect()
}

/// Predicted cell `θ′` for the modulus `rho` in class `m`.
pub fn predicted_theta_profile(rho: &[f64], m: i64, params: &ModelParams, h: f64) -> Result<Vec<f64>> {
    let c = predicted_flux_constant(rho, m, params, h)?;
    Ok(theta_profile_for_constant(rho, c, params))
}

/// Mean of the discrete twist flux of a polar field.
pub fn fitted_flux_constant(p: &PolarField, params: &ModelParams) -> f64 {
    let flux = crate::energy::twist_flux(p, params);
    flux.iter().sum::<f64>() / flux.len() as f64
}

/// Limit `2πL(M − N) + Lα` of the flux constant.
pub fn limit_flux_constant(m: i64, params: &ModelParams) -> f64 {
    params.l * (2.0 * PI * m as f64 + params.alpha - params.target_rate())
}

fn rotate(u: &ComplexField, rate: f64) -> ComplexField {
    let g = *u.grid();
    let values = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (s, c) = (rate * g.x(i)).sin_cos();
            [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
        })
        .collect();
    if u.is_boundary_enforced() {
        ComplexField::with_boundary(g, values, u.alpha()).expect("same grid")
    } else {
        ComplexField::new(g, values, u.alpha()).expect("finite values")
    }
}

fn carrier_rate(params: &ModelParams) -> Result<f64> {
    if params.beta().is_none() {
        return Err(Error::InvalidParameter("rescaling needs a beta twist parameter".into()));
    }
    Ok(2.0 * PI * params.floor_twist() as f64)
}

/// `w = u e^{-2πi⌊ε^{-β}⌋x}`.
pub fn rescale_to_w(u: &ComplexField, params: &ModelParams) -> Result<ComplexField> {
    Ok(rotate(u, -carrier_rate(params)?))
}

/// `u = w e^{2πi⌊ε^{-β}⌋x}`.
pub fn rescale_from_w(w: &ComplexField, params: &ModelParams) -> Result<ComplexField> {
    Ok(rotate(w, carrier_rate(params)?))
}

/// `v_i = ε^β θ_i / 2π`.
pub fn microscale_v(theta: &[f64], eps: f64, beta: f64) -> Vec<f64> {
    let s = eps.powf(beta) / (2.0 * PI);
    theta.iter().map(|t| s * t).collect()
}

/// `(Σ_{cells in [a, b]} (v′ − 1)² h)^{1/2}`.
pub fn h1_error(v: &[f64], grid: Grid, a: f64, b: f64) -> f64 {
    let h = grid.h();
    let mut acc = 0.0;
    for i in 0..v.len() - 1 {
        let (xl, xr) = (grid.x(i), grid.x(i + 1));
        if xl >= a - 1e-12 && xr <= b + 1e-12 {
            let d = (v[i + 1] - v[i]) / h - 1.0;
            acc += d * d * h;
        }
    }
    acc.sqrt()
}

/// `|∫ u φ̄ dx|` on the cell rule for a complex test function `φ`.
pub fn weak_probe(u: &ComplexField, phi: impl Fn(f64) -> [f64; 2]) -> f64 {
    let g = u.grid();
    let h = g.h();
    let (mut re, mut im) = (0.0, 0.0);
    for (i, w) in u.values().windows(2).enumerate() {
        let m = [0.5 * (w[0][0] + w[1][0]), 0.5 * (w[0][1] + w[1][1])];
        let p = phi(g.x(i) + 0.5 * h);
        re += h * (m[0] * p[0] + m[1] * p[1]);
        im += h * (m[1] * p[0] - m[0] * p[1]);
    }
    re.hypot(im)
}

/// Classification of a computed minimizer from its jump count and winding.
pub fn observed_kind(jumps: Option<usize>, winding: Option<i64>, base: i64) -> Option<Kind> {
    match (jumps?, winding) {
        (1, _) => Some(Kind::OneJumpFamily),
        (0, Some(m)) => match m - base {
            -1 => Some(Kind::NoJumpAtNminus1),
            0 => Some(Kind::NoJumpAtN),
            1 => Some(Kind::NoJumpAtNplus1),
            _ => None,
        },
        _ => None,
    }
}

/// One row of a phase-diagram sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    #[serde(rename = "L")]
    pub l: f64,
    pub alpha: f64,
    pub predicted: String,
    pub observed: String,
    pub energy: f64,
    pub jumps: Option<usize>,
    pub winding: Option<i64>,
    pub boundary_distance: f64,
    pub status: String,
    /// Discrete energy of the predicted limit object's recovery profile on
    /// the same grid (an admissible competitor); not part of the CSV table.
    #[serde(skip)]
    pub recovery_energy: Option<f64>,
    /// Location of the single jump, when there is one.
    #[serde(skip)]
    pub jump_location: Option<f64>,
}

impl PhaseCell {
    /// Whether the observed class matches the prediction.
    pub fn agrees(&self) -> bool {
        self.status == "ok" && self.predicted == self.observed
    }
}

/// Runs the multistart minimization for one `(L, α)` cell of the sweep.
pub fn phase_diagram_cell(l: f64, alpha: f64, template: &ModelParams, grid: Grid, opts: &SolverOptions) -> PhaseCell {
    phase_diagram_cell_with(l, alpha, template, grid, opts, Strategy::default_set)
}

/// [`phase_diagram_cell`] with a caller-chosen multistart set.
pub fn phase_diagram_cell_with(
    l: f64,
    alpha: f64,
    template: &ModelParams,
    grid: Grid,
    opts: &SolverOptions,
    strategies: impl Fn(&ModelParams) -> Vec<Strategy>,
) -> PhaseCell {
    let params = template.with_l(l).with_alpha(alpha);
    let a = params.fractional_twist();
    let class = classify_e0a(l, alpha, a);
    let mut cell = PhaseCell {
        l,
        alpha,
        predicted: class.kind.to_string(),
        observed: "none".into(),
        energy: f64::NAN,
        jumps: None,
        winding: None,
        boundary_distance: class.boundary_distance,
        status: "ok".into(),
        recovery_energy: None,
        jump_location: None,
    };
    if let Err(e) = params.validate() {
        cell.status = format!("invalid: {e}");
        return cell;
    }
    match select_best(multistart_all(&params, grid, &strategies(&params), opts)) {
        Ok(best) => {
            cell.energy = best.report.total();
            cell.jumps = best.jumps;
            cell.winding = best.report.winding;
            if !best.report.converged {
                cell.status = "not_converged".into();
            }
            cell.observed = observed_kind(best.jumps, best.report.winding, params.floor_twist())
                .map_or_else(|| "other".to_string(), |k| k.to_string());
            if best.jumps == Some(1) {
                cell.jump_location = extract_jump_map(&best.report.field, CLASSIFY_Q, &params)
                    .ok()
                    .and_then(|j| j.interior_jumps().first().copied());
            }
        }
        Err(e) => cell.status = format!("failed: {e}"),
    }
    cell.recovery_energy = recovery_competitor(&class, &params, grid)
        .ok()
        .map(|u| crate::energy::energy_eps(&u, &params).total);
    cell
}

/// A sampled recovery profile of the predicted limit minimizer.
pub fn recovery_competitor(class: &Classification, params: &ModelParams, grid: Grid) -> Result<ComplexField> {
    let kind = if class.kind == Kind::Tie { class.alternatives[0] } else { class.kind };
    let k = params.floor_twist();
    let a = params.fractional_twist();
    let alpha = params.alpha;
    let j = match kind.relative_winding() {
        Some(r) => {
            let rate = 2.0 * PI * (k + r) as f64 + alpha;
            return Ok(crate::field::twist_field(rate, alpha, grid));
        }
        None => JumpMap::one_jump(&grid, 0.5, params.target_rate(), alpha, a)?,
    };
    RecoveryProfile::new(&j, params.eps)?.sample(grid)
}

/// Sequential sweep over the `(L, α)` grid, row-major in `L`.
pub fn phase_diagram_sweep(
    l_values: &[f64],
    alpha_values: &[f64],
    template: &ModelParams,
    grid: Grid,
    opts: &SolverOptions,
) -> Vec<PhaseCell> {
    l_values
        .iter()
        .flat_map(|&l| alpha_values.iter().map(move |&a| (l, a)))
        .map(|(l, a)| phase_diagram_cell(l, a, template, grid, opts))
        .collect()
}

/// Fitted model `value ≈ limit + c·ε^order`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub order: f64,
    pub coefficient: f64,
}

/// Fits `value ≈ limit + c·ε^p` to the successive differences of the data
/// (log-space least squares in `p`), then averages out the limit.
pub fn extrapolate_eps(pairs: &[(f64, f64)]) -> Result<Extrapolation> {
    let raw = || format!("{pairs:?}");
    if pairs.len() < 3 {
        return Err(Error::NoFit(format!("need at least 3 pairs, got {}", pairs.len())));
    }
    if pairs.windows(2).any(|w| !(w[1].0 < w[0].0) || w[1].0 <= 0.0) {
        return Err(Error::NoFit(format!("eps must be positive and strictly decreasing: {}", raw())));
    }
    let diffs: Vec<f64> = pairs.windows(2).map(|w| w[1].1 - w[0].1).collect();
    if diffs.iter().all(|d| *d == 0.0) {
        return Ok(Extrapolation {
            limit: pairs[pairs.len() - 1].1,
            order: f64::INFINITY,
            coefficient: 0.0,
        });
    }
    let sign = diffs[0].signum();
    let same_sign = diffs.iter().all(|d| d.signum() == sign && *d != 0.0);
    let shrinking = diffs.windows(2).all(|w| w[1].abs() < w[0].abs());
    if !same_sign || !shrinking {
        return Err(Error::NoFit(format!("non-monotone differences: {}", raw())));
    }
    let logs: Vec<f64> = diffs.iter().map(|d| d.abs().ln()).collect();
    let basis = |p: f64| -> Vec<f64> {
        pairs
            .windows(2)
            .map(|w| (w[0].0.powf(p) - w[1].0.powf(p)).ln())
            .collect()
    };
    let misfit = |p: f64| {
        let b = basis(p);
        let offset = logs.iter().zip(&b).map(|(l, b)| l - b).sum::<f64>() / b.len() as f64;
        logs.iter().zip(&b).map(|(l, b)| (l - b - offset).powi(2)).sum::<f64>()
    };
    let (lo, hi) = (0.05, 8.0);
    let scan = 400;
    let mut best_k = 0;
    let mut best = f64::INFINITY;
    for k in 0..=scan {
        let p = lo + (hi - lo) * k as f64 / scan as f64;
        let m = misfit(p);
        if m < best {
            best = m;
            best_k = k;
        }
    }
    let step = (hi - lo) / scan as f64;
    let a = (lo + step * (best_k as f64 - 1.0)).max(lo);
    let b = (lo + step * (best_k as f64 + 1.0)).min(hi);
    let (p, _) = golden_min(misfit, a, b, 1e-12);
    let bp = basis(p);
    let log_c = logs.iter().zip(&bp).map(|(l, b)| l - b).sum::<f64>() / bp.len() as f64;
    // Differences run from larger to smaller ε, so v decreases when c > 0.
    let c = -sign * log_c.exp();
    let limit = pairs.iter().map(|(e, v)| v - c * e.powf(p)).sum::<f64>() / pairs.len() as f64;
    Ok(Extrapolation {
        limit,
        order: p,
        coefficient: c,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::energy::{energy_eps, energy_gamma};
    use crate::field::{make_grid, uniform_twist_field};
    use crate::lifting::detect_bad_intervals;

    #[test]
    fn classify_examples() {
        let c = classify_e0(1.0, 1.0);
        assert_eq!(c.kind, Kind::NoJumpAtN);
        assert!((c.predicted_energy - 0.5).abs() < 1e-15);
        let c = classify_e0(1.0, PI);
        assert_eq!(c.kind, Kind::OneJumpFamily);
        assert!((c.predicted_energy - JUMP_COST).abs() < 1e-15);
        for l in [0.01, 1.0, 50.0] {
            let c = classify_e0(l, 0.0);
            assert_eq!(c.kind, Kind::NoJumpAtN);
            assert_eq!(c.predicted_energy, 0.0);
        }
        let c = classify_e0(0.1, PI);
        assert_eq!(c.kind, Kind::Tie);
        assert_eq!(c.alternatives.len(), 2);
        assert!(c.boundary_distance < 1e-12);
    }

    #[test]
    fn classify_fractional_examples() {
        let c = classify_e0a(1.0, 0.0, 0.5);
        assert!(c.nearest_integer_tie);
        assert_eq!(c.kind, Kind::OneJumpFamily);
        let c = classify_e0a(0.001, 0.0, 0.5);
        assert_eq!(c.kind, Kind::Tie);
        assert!((c.predicted_energy - 0.0005 * PI * PI).abs() < 1e-15);
        let c = classify_e0a(0.001, 0.3, 0.5);
        assert_eq!(c.kind, Kind::NoJumpAtN);
        let c = classify_e0a(0.001, 0.3, 0.9);
        assert_eq!(c.kind, Kind::NoJumpAtNplus1);
        let small = classify_e0a(0.2, 0.2, 0.0);
        assert_eq!(small, classify_e0(0.2, 0.2));
    }

    #[test]
    fn critical_angle_at_unit_twist_weight() {
        let a_star = (2.0 * JUMP_COST).sqrt();
        assert!((a_star - 1.3731776).abs() < 1e-6);
        assert_eq!(classify_e0(1.0, a_star - 1e-6).kind, Kind::NoJumpAtN);
        assert_eq!(classify_e0(1.0, a_star + 1e-6).kind, Kind::OneJumpFamily);
        assert!(classify_e0(1.0, a_star).boundary_distance < 1e-6);
        let d = classify_e0(1.0, a_star + 0.3).boundary_distance;
        assert!(d > 0.05 && d <= 0.3);
    }

    #[test]
    fn local_and_saddle_predictions() {
        let p = ModelParams::new(0.01, 0.5, 2, 1.0).unwrap();
        assert!((predicted_local_energy(2, &p) - 0.25).abs() < 1e-15);
        let p = ModelParams::new(0.01, 1.0, 1, 0.0).unwrap();
        assert_eq!(predicted_local_energy(1, &p), 0.0);
        assert!((predicted_local_energy(2, &p) - 2.0 * PI * PI).abs() < 1e-12);
        let p = ModelParams::new(0.01, 0.1, 1, 0.0).unwrap();
        assert!((predicted_saddle_energy(0, &p) - 2.916730).abs() < 1e-6);
        assert!((predicted_saddle_energy(1, &p) - JUMP_COST).abs() < 1e-15);
    }

    #[test]
    fn transition_cost_approaches_jump_cost() {
        let half = SQRT_2 / 3.0;
        assert!((2.0 * half - JUMP_COST).abs() < 1e-15);
        let c = transition_layer_cost(1e-4);
        assert!((c - JUMP_COST).abs() < 0.02 * JUMP_COST);
        let errs: Vec<f64> = [4e-2, 1e-2, 2.5e-3]
            .iter()
            .map(|&e| (transition_layer_cost(e) - JUMP_COST).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        assert!((errs[0] / errs[1]).ln() / 4f64.ln() >= 0.4);
    }

    #[test]
    fn recovery_without_jumps_is_uniform_twist() {
        let g = make_grid(501).unwrap();
        let params = ModelParams::new(0.01, 0.8, 1, 0.6).unwrap();
        let j = JumpMap::no_jump(&g, 0.6, 1.0, |x| (2.0 * PI + 0.6) * x).unwrap();
        let u = build_recovery_sequence(&j, 0.01, g).unwrap();
        let v = uniform_twist_field(1, &params, g);
        for (a, b) in u.values().iter().zip(v.values()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_energy_tracks_limit() {
        let mut errors = Vec::new();
        for eps in [0.02, 0.01] {
            let g = make_grid(5 * (1.0 / (eps * eps)) as usize + 1).unwrap();
            let params = ModelParams::new(eps, 2.0, 1, PI).unwrap();
            let j = JumpMap::one_jump(&g, 0.5, 2.0 * PI, PI, 1.0).unwrap();
            let u = build_recovery_sequence(&j, eps, g).unwrap();
            let e = energy_eps(&u, &params).total;
            let e0 = energy_gamma(&j, params.l, 2.0 * PI).unwrap();
            assert!(e > e0);
            errors.push(e - e0);
            assert_eq!(detect_bad_intervals(&u, 4).count, 1);
            let back = extract_jump_map(&u, 4, &params).unwrap();
            assert_eq!(back.jump_count(), 1);
            assert!((back.jumps()[0] - 0.5).abs() < 2.0 * eps.sqrt() + eps * eps);
        }
        assert!(errors[0] / errors[1] > 1.5, "{errors:?}");
    }

    #[test]
    fn coarse_grid_and_overlap_are_rejected() {
        let g = make_grid(101).unwrap();
        let j = JumpMap::one_jump(&g, 0.5, 0.0, 1.0, 0.0).unwrap();
        assert!(matches!(build_recovery_sequence(&j, 0.01, g), Err(Error::Resolution(_))));
        let mut pieces = Vec::new();
        let cuts = [0.0, 0.4, 0.45, 1.0];
        for k in 0..3 {
            let x: Vec<f64> = g.nodes().filter(|&x| x >= cuts[k] && x <= cuts[k + 1] && x != 0.4 && x != 0.45).collect();
            let theta = x.iter().map(|_| k as f64).collect();
            pieces.push(crate::jump::PhasePiece { x, theta });
        }
        let j2 = JumpMap::new(vec![0.4, 0.45], pieces, 2.0, 0.0).unwrap();
        assert!(matches!(RecoveryProfile::new(&j2, 0.01), Err(Error::Overlap(_))));
    }

    #[test]
    fn boundary_jump_uses_endpoint_recipe() {
        let g = make_grid(11).unwrap();
        let j = JumpMap::no_jump(&g, 0.0, 0.0, |x| 0.5 + 0.5 * x).unwrap();
        assert_eq!(j.jumps(), &[0.0, 1.0]);
        let eps = 0.01;
        let p = RecoveryProfile::new(&j, eps).unwrap();
        let c0 = eps.sqrt() + 0.5 * eps * eps;
        assert!((p.transitions()[0].center - c0).abs() < 1e-15);
        assert_eq!(p.modulus(c0).0, 0.0);
        assert!((p.modulus(0.0).0 - 1.0).abs() < 1e-12);
        assert_eq!(p.phase(0.5 * c0), 0.0);
        assert!((p.phase(0.5) - 0.75).abs() < 1e-12);
        assert_eq!(p.phase(1.0), 0.0);
    }

    #[test]
    fn theta_profile_for_unit_modulus() {
        let params = ModelParams::new(0.03, 0.7, 2, 1.3).unwrap();
        let g = make_grid(201).unwrap();
        let rho = vec![1.0; 201];
        for m in -1..=3 {
            let c = predicted_flux_constant(&rho, m, &params, g.h()).unwrap();
            let rate = 2.0 * PI * m as f64 + 1.3;
            assert!((c - (rate * (0.7 + 0.03) - 4.0 * PI * 0.7)).abs() < 1e-10);
            let prof = predicted_theta_profile(&rho, m, &params, g.h()).unwrap();
            assert!(prof.iter().all(|t| (t - rate).abs() < 1e-10));
            assert!((prof.iter().sum::<f64>() * g.h() - rate).abs() < 1e-10);
        }
        let mut bad = rho.clone();
        bad[5] = 0.0;
        assert!(predicted_theta_profile(&bad, 1, &params, g.h()).is_err());
    }

    #[test]
    fn rescaling_round_trip() {
        let eps = crate::params::eps_for_twist(0.25, 4, 0.3);
        let params = ModelParams::rescaled(eps, 1.0, 0.25, 0.8).unwrap();
        let g = make_grid(401).unwrap();
        let k = params.floor_twist();
        let u = uniform_twist_field(k, &params, g);
        let w = rescale_to_w(&u, &params).unwrap();
        let wd = crate::lifting::winding_number(&w).unwrap();
        assert_eq!(wd, crate::lifting::winding_number(&u).unwrap() - k);
        let u2 = rescale_from_w(&w, &params).unwrap();
        for (a, b) in u.values().iter().zip(u2.values()) {
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
        let carrier = crate::field::twist_field(2.0 * PI * k as f64, 0.0, g);
        let params0 = params.with_alpha(0.0);
        let w0 = rescale_to_w(&carrier, &params0).unwrap();
        assert!(w0.values().iter().all(|v| (v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12));
        assert!(rescale_to_w(&u, &ModelParams::new(0.1, 1.0, 1, 0.8).unwrap()).is_err());
    }

    #[test]
    fn microscale_of_exact_twist_is_identity() {
        let eps = crate::params::eps_for_twist(0.25, 3, 0.4);
        let g = make_grid(101).unwrap();
        let rate = 2.0 * PI * eps.powf(-0.25);
        let theta: Vec<f64> = g.nodes().map(|x| rate * x).collect();
        let v = microscale_v(&theta, eps, 0.25);
        for (vi, x) in v.iter().zip(g.nodes()) {
            assert!((vi - x).abs() < 1e-12);
        }
        assert!(h1_error(&v, g, 0.2, 0.8) < 1e-10);
    }

    #[test]
    fn weak_probe_of_fast_oscillation_is_small() {
        let g = make_grid(2001).unwrap();
        let slow = crate::field::twist_field(2.0 * PI, 0.0, g);
        let fast = crate::field::twist_field(2.0 * PI * 20.0, 0.0, g);
        let phi = |x: f64| [(2.0 * PI * x).cos(), (2.0 * PI * x).sin()];
        assert!((weak_probe(&slow, phi) - 1.0).abs() < 1e-5);
        assert!(weak_probe(&fast, phi) < 1e-3);
    }

    #[test]
    fn extrapolation_examples() {
        let eps = [0.08, 0.04, 0.02, 0.01];
        let lin: Vec<(f64, f64)> = eps.iter().map(|&e| (e, 1.0 + e)).collect();
        let r = extrapolate_eps(&lin).unwrap();
        assert!((r.limit - 1.0).abs() < 1e-6 && (r.order - 1.0).abs() < 1e-6);
        let sq: Vec<(f64, f64)> = eps.iter().map(|&e| (e, 1.0 + e.sqrt())).collect();
        let r = extrapolate_eps(&sq).unwrap();
        assert!((r.order - 0.5).abs() < 1e-6 && (r.limit - 1.0).abs() < 1e-6);
        let bumpy = [(0.1, 1.0), (0.05, 2.0), (0.025, 1.5), (0.0125, 1.7)];
        assert!(matches!(extrapolate_eps(&bumpy), Err(Error::NoFit(_))));
        assert!(extrapolate_eps(&lin[..2]).is_err());
    }

    proptest! {
        #[test]
        fn mirror_symmetry(l in 0.01..3.0f64, alpha in 0.01..6.27f64) {
            let a = classify_e0(l, alpha);
            let b = classify_e0(l, 2.0 * PI - alpha);
            let mirror = |k: Kind| match k {
                Kind::NoJumpAtN => Kind::NoJumpAtNminus1,
                Kind::NoJumpAtNminus1 => Kind::NoJumpAtN,
                other => other,
            };
            prop_assert_eq!(mirror(a.kind), b.kind);
            prop_assert!((a.predicted_energy - b.predicted_energy).abs() < 1e-9);
            prop_assert!((a.boundary_distance - b.boundary_distance).abs() < 1e-6);
        }

        #[test]
        fn predicted_energy_is_branch_minimum(l in 0.01..3.0f64, alpha in 0.0..6.28f64) {
            let c = classify_e0(l, alpha);
            let m = (0.5 * l * alpha * alpha).min(0.5 * l * (2.0 * PI - alpha).powi(2)).min(JUMP_COST);
            prop_assert!((c.predicted_energy - m).abs() < 1e-12);
            prop_assert!(c.boundary_distance >= 0.0);
        }

        #[test]
        fn extrapolation_recovers_power_laws(limit in -5.0..5.0f64, c in 0.1..3.0f64, p in 0.3..3.0f64) {
            let data: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&e: &f64| (e, limit + c * e.powf(p))).collect();
            let r = extrapolate_eps(&data).unwrap();
            prop_assert!((r.order - p).abs() < 1e-5);
            prop_assert!((r.limit - limit).abs() < 1e-6);
        }
    }
}
