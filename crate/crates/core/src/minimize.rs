//! Descent solvers for the discrete energy.
//!
//! Both modes run a damped Newton iteration on the interior degrees of
//! freedom: the exact banded Hessian is shifted by a Levenberg–Marquardt term
//! until it factors, and an Armijo backtracking search along the (projected)
//! step keeps every accepted iterate energy-non-increasing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banded::SymBanded;
use crate::energy::{
    cart_energy, cart_gradient, cart_hessian, polar_energy, polar_gradient, polar_hessian, Coeffs,
    EnergyBreakdown,
};
use crate::error::{Error, Result};
use crate::field::{to_cartesian, ComplexField, Grid, PolarField};
use crate::lifting::{extract_jump_map, winding_number, CLASSIFY_Q};
use crate::params::ModelParams;

/// Default lower bound on the modulus in winding-class minimization.
pub const DEFAULT_RHO0: f64 = 0.5;

/// Energies closer than this are treated as tied by [`multistart_global`].
pub const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Max-norm stopping threshold; `None` means `1e-8 · n`.
    pub grad_tol: Option<f64>,
    pub initial_step: f64,
    pub shrink: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub c1: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            grad_tol: None,
            initial_step: 1.0,
            shrink: 0.5,
            c1: 1e-4,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.grad_tol {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("grad_tol must be positive, got {t}")));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(format!("shrink must lie in (0, 1), got {}", self.shrink)));
        }
        if !(self.c1 > 0.0 && self.c1 <= 0.5) {
            return Err(Error::InvalidParameter(format!("c1 must lie in (0, 0.5], got {}", self.c1)));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::InvalidParameter("initial_step must be positive".into()));
        }
        Ok(())
    }

    pub fn grad_tol_for(&self, n: usize) -> f64 {
        self.grad_tol.unwrap_or(1e-8 * n as f64)
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = Some(tol);
        self
    }
}

/// Energy, gradient and Hessian on the interior degrees of freedom.
pub(crate) trait Objective {
    fn energy(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> SymBanded;
}

pub(crate) struct CartObjective {
    values: Vec<[f64; 2]>,
    h: f64,
    c: Coeffs,
}

impl CartObjective {
    pub fn new(u: &ComplexField, params: &ModelParams) -> Self {
        Self {
            values: u.values().to_vec(),
            h: u.grid().h(),
            c: Coeffs::from(params),
        }
    }

    pub fn fill(&self, x: &[f64]) -> Vec<[f64; 2]> {
        let mut v = self.values.clone();
        let n = v.len();
        for (i, node) in v[1..n - 1].iter_mut().enumerate() {
            *node = [x[2 * i], x[2 * i + 1]];
        }
        v
    }
}

impl Objective for CartObjective {
    fn energy(&self, x: &[f64]) -> f64 {
        cart_energy(&self.fill(x), self.h, &self.c).total
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let g = cart_gradient(&self.fill(x), self.h, &self.c);
        let n = g.len();
        g[1..n - 1].iter().flat_map(|v| [v[0], v[1]]).collect()
    }

    fn hessian(&self, x: &[f64]) -> SymBanded {
        cart_hessian(&self.fill(x), self.h, &self.c)
    }
}

struct PolarObjective {
    rho: Vec<f64>,
    theta: Vec<f64>,
    h: f64,
    c: Coeffs,
}

impl PolarObjective {
    fn fill(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut r, mut t) = (self.rho.clone(), self.theta.clone());
        for i in 1..r.len() - 1 {
            r[i] = x[2 * (i - 1)];
            t[i] = x[2 * (i - 1) + 1];
        }
        (r, t)
    }
}

impl Objective for PolarObjective {
    fn energy(&self, x: &[f64]) -> f64 {
        let (r, t) = self.fill(x);
        polar_energy(&r, &t, self.h, &self.c).total
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (r, t) = self.fill(x);
        let (gr, gt) = polar_gradient(&r, &t, self.h, &self.c);
        (1..r.len() - 1).flat_map(|i| [gr[i], gt[i]]).collect()
    }

    fn hessian(&self, x: &[f64]) -> SymBanded {
        let (r, t) = self.fill(x);
        polar_hessian(&r, &t, self.h, &self.c)
    }
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub gnorm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

fn active_set(x: &[f64], g: &[f64], lower: Option<&[f64]>) -> Vec<bool> {
    match lower {
        None => vec![false; x.len()],
        Some(lo) => x
            .iter()
            .zip(g)
            .zip(lo)
            .map(|((&xi, &gi), &li)| xi <= li && gi > 0.0)
            .collect(),
    }
}

fn max_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

/// A Levenberg–Marquardt-regularized Newton direction `−(H + μI)⁻¹ g`; `mu`
/// is raised until the shifted matrix factors.
pub(crate) fn lm_direction(mut hess: SymBanded, g: &[f64], mu: &mut f64, fixed: &[bool]) -> Vec<f64> {
    for (i, &f) in fixed.iter().enumerate() {
        if f {
            hess.isolate(i, 1.0);
        }
    }
    let scale = hess.max_abs_diagonal().max(1e-300);
    let rhs: Vec<f64> = g
        .iter()
        .zip(fixed)
        .map(|(&gi, &f)| if f { 0.0 } else { -gi })
        .collect();
    loop {
        let mut shifted = hess.clone();
        if *mu > 0.0 {
            shifted.add_diagonal(*mu);
        }
        if let Some(ch) = shifted.cholesky() {
            return ch.solve(&rhs);
        }
        *mu = if *mu < 1e-10 * scale { 1e-10 * scale } else { *mu * 4.0 };
    }
}

/// Damped (projected) Newton descent from `x`.
pub(crate) fn newton(
    obj: &dyn Objective,
    mut x: Vec<f64>,
    lower: Option<&[f64]>,
    opts: &SolverOptions,
    tol: f64,
) -> Result<Outcome> {
    let project = |v: &mut [f64]| {
        if let Some(lo) = lower {
            for (vi, &li) in v.iter_mut().zip(lo) {
                if *vi < li {
                    *vi = li;
                }
            }
        }
    };
    project(&mut x);
    let mut e = obj.energy(&x);
    if !e.is_finite() {
        return Err(Error::Divergence {
            iterations: 0,
            last_energy: e,
        });
    }
    let mut trace = vec![e];
    let mut mu = 0.0f64;
    let mut iterations = 0;
    let mut g = obj.gradient(&x);
    let mut active = active_set(&x, &g, lower);
    let mut gnorm = max_norm(g.iter().zip(&active).map(|(&gi, &a)| if a { 0.0 } else { gi }));
    while gnorm > tol && iterations < opts.max_iters {
        let hess = obj.hessian(&x);
        let scale = hess.max_abs_diagonal().max(1e-300);
        let mut accepted = None;
        while accepted.is_none() {
            let d = lm_direction(hess.clone(), &g, &mut mu, &active);
            let mut t = opts.initial_step;
            for _ in 0..60 {
                let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut xt);
                let et = obj.energy(&xt);
                let pred: f64 = g.iter().zip(xt.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
                let roundoff = pred.abs() <= 1e-14 * (1.0 + e.abs());
                if et.is_finite() && (et <= e + opts.c1 * pred || (roundoff && et <= e)) {
                    accepted = Some((xt, et, t));
                    break;
                }
                t *= opts.shrink;
            }
            if accepted.is_none() {
                if mu > 1e12 * scale {
                    break;
                }
                mu = (mu * 10.0).max(1e-6 * scale);
            }
        }
        let Some((xt, et, t)) = accepted else {
            break;
        };
        x = xt;
        e = et;
        trace.push(e);
        iterations += 1;
        if t == opts.initial_step {
            mu *= 0.25;
            if mu < 1e-14 * scale {
                mu = 0.0;
            }
        }
        g = obj.gradient(&x);
        active = active_set(&x, &g, lower);
        gnorm = max_norm(g.iter().zip(&active).map(|(&gi, &a)| if a { 0.0 } else { gi }));
    }
    Ok(Outcome {
        x,
        gnorm,
        iterations,
        converged: gnorm <= tol,
        trace,
    })
}

/// Result of a single minimization.
#[derive(Clone, Debug)]
pub struct MinimizeReport {
    pub field: ComplexField,
    /// Present for winding-class (polar) runs.
    pub polar: Option<PolarField>,
    pub breakdown: EnergyBreakdown,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub grad_tol: f64,
    pub constraint_active: bool,
    pub winding: Option<i64>,
    pub converged: bool,
    /// Energy after each accepted step, starting with the initial energy.
    pub energy_trace: Vec<f64>,
}

/// JSON view of a [`MinimizeReport`] without the field data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub grad_tol: f64,
    pub constraint_active: bool,
    pub winding: Option<i64>,
    pub converged: bool,
    pub min_modulus: f64,
}

impl MinimizeReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            energy: self.breakdown,
            iterations: self.iterations,
            final_grad_norm: self.final_grad_norm,
            grad_tol: self.grad_tol,
            constraint_active: self.constraint_active,
            winding: self.winding,
            converged: self.converged,
            min_modulus: self.field.min_modulus(),
        }
    }

    pub fn total(&self) -> f64 {
        self.breakdown.total
    }

    /// Whether the recorded energies never increase.
    pub fn is_monotone(&self) -> bool {
        self.energy_trace.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Unconstrained minimization in Cartesian node values.
pub fn minimize_free(init: &ComplexField, params: &ModelParams, opts: &SolverOptions) -> Result<MinimizeReport> {
    params.validate()?;
    opts.validate()?;
    if !init.is_boundary_enforced() {
        return Err(Error::InvalidField("initial field must satisfy the boundary data".into()));
    }
    let n = init.grid().n();
    let tol = opts.grad_tol_for(n);
    let obj = CartObjective::new(init, params);
    let out = newton(&obj, init.interior(), None, opts, tol)?;
    let field = init.with_interior(&out.x);
    let breakdown = crate::energy::energy_eps(&field, params);
    Ok(MinimizeReport {
        winding: winding_number(&field).ok(),
        field,
        polar: None,
        breakdown,
        iterations: out.iterations,
        final_grad_norm: out.gnorm,
        grad_tol: tol,
        constraint_active: false,
        converged: out.converged,
        energy_trace: out.trace,
    })
}

/// Minimizes over `ρ ≥ ρ₀`, `θ(0) = 0`, `θ(1) = 2πM + α`, starting from the
/// uniform twist of class `M`.
pub fn minimize_winding_class(
    m: i64,
    rho0: f64,
    params: &ModelParams,
    grid: Grid,
    opts: &SolverOptions,
) -> Result<MinimizeReport> {
    minimize_winding_class_from(&PolarField::uniform(grid, m, params.alpha), rho0, params, opts)
}

/// As [`minimize_winding_class`] from a supplied polar initializer.
pub fn minimize_winding_class_from(
    init: &PolarField,
    rho0: f64,
    params: &ModelParams,
    opts: &SolverOptions,
) -> Result<MinimizeReport> {
    params.validate()?;
    opts.validate()?;
    if !(rho0 > 0.0 && rho0 < 1.0) {
        return Err(Error::InvalidParameter(format!("rho0 must lie in (0, 1), got {rho0}")));
    }
    if !init.is_boundary_enforced() {
        return Err(Error::InvalidField("initial field must satisfy the boundary data".into()));
    }
    let grid = *init.grid();
    let n = grid.n();
    let tol = opts.grad_tol_for(n);
    let obj = PolarObjective {
        rho: init.rho().to_vec(),
        theta: init.theta().to_vec(),
        h: grid.h(),
        c: Coeffs::from(params),
    };
    let lower: Vec<f64> = (0..n - 2).flat_map(|_| [rho0, f64::NEG_INFINITY]).collect();
    let out = newton(&obj, init.interior(), Some(&lower), opts, tol)?;
    let polar = init.with_interior(&out.x);
    let constraint_active = polar.rho()[1..n - 1].iter().any(|&r| r <= rho0);
    let field = to_cartesian(&polar);
    let breakdown = crate::energy::energy_eps_polar(&polar, params);
    Ok(MinimizeReport {
        winding: winding_number(&field).ok(),
        field,
        polar: Some(polar),
        breakdown,
        iterations: out.iterations,
        final_grad_norm: out.gnorm,
        grad_tol: tol,
        constraint_active,
        converged: out.converged,
        energy_trace: out.trace,
    })
}

/// Central-difference gradient at `count` random interior coordinates, drawn
/// from `seed`. Returns the largest magnitude seen.
pub fn stationarity_probe(report: &MinimizeReport, params: &ModelParams, seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-6;
    let c = Coeffs::from(params);
    let n = report.field.grid().n();
    let h = report.field.grid().h();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let node = rng.gen_range(1..n - 1);
        let comp = rng.gen_range(0..2usize);
        let fd = match &report.polar {
            Some(p) => {
                let (mut r, mut t) = (p.rho().to_vec(), p.theta().to_vec());
                let target = if comp == 0 { &mut r } else { &mut t };
                let o = target[node];
                target[node] = o + step;
                let (r1, t1) = (r.clone(), t.clone());
                let target = if comp == 0 { &mut r } else { &mut t };
                target[node] = o - step;
                (polar_energy(&r1, &t1, h, &c).total - polar_energy(&r, &t, h, &c).total) / (2.0 * step)
            }
            None => {
                let mut v = report.field.values().to_vec();
                let o = v[node][comp];
                v[node][comp] = o + step;
                let ep = cart_energy(&v, h, &c).total;
                v[node][comp] = o - step;
                let em = cart_energy(&v, h, &c).total;
                (ep - em) / (2.0 * step)
            }
        };
        worst = worst.max(fd.abs());
    }
    worst
}

/// Initializer for one multistart run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// `e^{i(2πM + α)x}`.
    UniformTwist { m: i64 },
    /// Twist `rate` with a Gaussian modulus dip at `x0` and a smooth phase
    /// step; `rate + step` must be congruent to `α` mod 2π.
    SeededDip { x0: f64, rate: f64, step: f64 },
    /// Recovery profile of the one-jump map with preferred twist on both
    /// sides of `x0`: an ε-wide modulus layer reaching zero. Needs `h ≤ ε/2`.
    LayerDip { x0: f64 },
}

impl Strategy {
    pub fn initial_field(&self, params: &ModelParams, grid: Grid) -> Result<ComplexField> {
        let alpha = params.alpha;
        match *self {
            Strategy::UniformTwist { m } => Ok(crate::field::uniform_twist_field(m, params, grid)),
            Strategy::SeededDip { x0, rate, step } => {
                let mismatch = crate::params::wrap_angle(rate + step - alpha);
                if mismatch.abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "seeded dip ends at phase {} which is not α mod 2π",
                        rate + step
                    )));
                }
                let sigma = params.eps.sqrt();
                let w = sigma;
                let lo = (-x0 / w).tanh();
                let hi = ((1.0 - x0) / w).tanh();
                ComplexField::from_fn(grid, alpha, |x| {
                    let r = 1.0 - 0.95 * (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp();
                    let ramp = (((x - x0) / w).tanh() - lo) / (hi - lo);
                    let t = rate * x + step * ramp;
                    [r * t.cos(), r * t.sin()]
                })
            }
            Strategy::LayerDip { x0 } => {
                let twist = params.n().map_or_else(|| params.fractional_twist(), f64::from);
                let j = crate::jump::JumpMap::one_jump(&grid, x0, params.target_rate(), alpha, twist)?;
                crate::asymptotics::RecoveryProfile::new(&j, params.eps)?.sample(grid)
            }
        }
    }

    /// Uniform twists in the three classes nearest the preferred twist,
    /// dipped starts with both phase-step orientations, and a layer dip.
    pub fn default_set(params: &ModelParams) -> Vec<Strategy> {
        let k = params.floor_twist();
        let rate = params.target_rate();
        let a = params.fractional_twist();
        let base_step = params.alpha - 2.0 * PI * a;
        let mut s: Vec<Strategy> = (k - 1..=k + 1).map(|m| Strategy::UniformTwist { m }).collect();
        for step in [base_step, base_step - 2.0 * PI] {
            s.push(Strategy::SeededDip { x0: 0.5, rate, step });
        }
        if a > 0.0 {
            s.push(Strategy::SeededDip {
                x0: 0.5,
                rate,
                step: base_step + 2.0 * PI,
            });
        }
        s.push(Strategy::LayerDip { x0: 0.5 });
        s
    }

    /// Uniform twists in the three nearest classes plus a layer dip. For
    /// small ε on a grid with `h ≤ ε/2`, where the smooth dipped starts
    /// wander into far-off classes.
    pub fn layer_set(params: &ModelParams) -> Vec<Strategy> {
        let k = params.floor_twist();
        let mut s: Vec<Strategy> = (k - 1..=k + 1).map(|m| Strategy::UniformTwist { m }).collect();
        s.push(Strategy::LayerDip { x0: 0.5 });
        s
    }
}

/// One multistart run and the jump count used for tie-breaking.
#[derive(Clone, Debug)]
pub struct StartResult {
    pub strategy: Strategy,
    pub report: MinimizeReport,
    pub jumps: Option<usize>,
}

/// Runs every strategy; failed starts are returned as errors in place.
pub fn multistart_all(
    params: &ModelParams,
    grid: Grid,
    strategies: &[Strategy],
    opts: &SolverOptions,
) -> Vec<Result<StartResult>> {
    strategies
        .iter()
        .map(|s| {
            let init = s.initial_field(params, grid)?;
            let report = minimize_free(&init, params, opts)?;
            let jumps = extract_jump_map(&report.field, CLASSIFY_Q, params)
                .ok()
                .map(|j| j.jump_count());
            Ok(StartResult {
                strategy: s.clone(),
                report,
                jumps,
            })
        })
        .collect()
}

/// Picks the lowest energy; within [`TIE_TOL`], fewer jumps win, then the
/// lower winding.
pub fn select_best(results: Vec<Result<StartResult>>) -> Result<StartResult> {
    let mut errors = Vec::new();
    let mut best: Option<StartResult> = None;
    for r in results {
        match r {
            Err(e) => errors.push(e.to_string()),
            Ok(r) => {
                best = Some(match best {
                    None => r,
                    Some(b) => {
                        if better(&r, &b) {
                            r
                        } else {
                            b
                        }
                    }
                });
            }
        }
    }
    best.ok_or_else(|| Error::AllStartsFailed(errors.join("; ")))
}

fn better(a: &StartResult, b: &StartResult) -> bool {
    let (ea, eb) = (a.report.total(), b.report.total());
    if (ea - eb).abs() > TIE_TOL {
        return ea < eb;
    }
    let ja = a.jumps.unwrap_or(usize::MAX);
    let jb = b.jumps.unwrap_or(usize::MAX);
    if ja != jb {
        return ja < jb;
    }
    a.report.winding.unwrap_or(i64::MAX) < b.report.winding.unwrap_or(i64::MAX)
}

/// Lowest-energy minimizer over all strategies.
pub fn multistart_global(
    params: &ModelParams,
    grid: Grid,
    strategies: &[Strategy],
    opts: &SolverOptions,
) -> Result<MinimizeReport> {
    if strategies.is_empty() {
        return Err(Error::InvalidParameter("no multistart strategies given".into()));
    }
    Ok(select_best(multistart_all(params, grid, strategies, opts))?.report)
}
