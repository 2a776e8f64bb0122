//! String method for transition paths between winding classes.
//!
//! Interior images take one safeguarded descent step per sweep, then the
//! whole path is resampled to equal arclength in the discrete L² metric. The
//! barrier is read off as the highest image.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::energy_eps;
use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid};
use crate::lifting::{unwrap_phase, winding_number};
use crate::minimize::{lm_direction, CartObjective, Objective};
use crate::params::ModelParams;

pub const DEFAULT_IMAGES: usize = 33;
pub const MIN_IMAGES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StringOptions {
    pub max_sweeps: usize,
    /// Stop once the top energy moved less than `stall_tol` over this many sweeps.
    pub stall_window: usize,
    pub stall_tol: f64,
    /// Largest image move per sweep, as a fraction of the mean image spacing.
    pub step_fraction: f64,
    /// Allowed rise of the top energy between accepted sweeps.
    pub slack: f64,
}

impl Default for StringOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 20_000,
            stall_window: 100,
            stall_tol: 1e-8,
            step_fraction: 0.5,
            slack: 1e-10,
        }
    }
}

/// Why [`relax_path`] stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Not relaxed yet.
    Initial,
    /// Top energy moved less than the tolerance over the stall window.
    Converged,
    /// Every resampled sweep raised the top energy, even at tiny step sizes.
    Stalled,
    MaxSweeps,
}

/// Ordered images of a path with fixed endpoints.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    images: Vec<ComplexField>,
    /// Normalized cumulative L² arclength at each image.
    arclength: Vec<f64>,
    /// Image energies, one row per accepted sweep (row 0 is the initial path).
    history: Vec<Vec<f64>>,
    sweeps: usize,
    stop: StopReason,
}

impl PathEnsemble {
    /// Wraps an explicit image list; the endpoints are kept verbatim.
    pub fn new(images: Vec<ComplexField>, params: &ModelParams) -> Result<Self> {
        if images.len() < MIN_IMAGES {
            return Err(Error::InvalidParameter(format!(
                "a path needs at least {MIN_IMAGES} images, got {}",
                images.len()
            )));
        }
        let g = *images[0].grid();
        for u in &images {
            if *u.grid() != g {
                return Err(Error::InvalidGrid("path images must share one grid".into()));
            }
            if !u.is_boundary_enforced() {
                return Err(Error::InvalidField("path images must satisfy the boundary data".into()));
            }
        }
        let arclength = normalized_arclength(&images)?;
        let energies = images.iter().map(|u| energy_eps(u, params).total).collect();
        Ok(Self {
            images,
            arclength,
            history: vec![energies],
            sweeps: 0,
            stop: StopReason::Initial,
        })
    }

    pub fn images(&self) -> &[ComplexField] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn arclength(&self) -> &[f64] {
        &self.arclength
    }

    pub fn energies(&self) -> &[f64] {
        self.history.last().expect("history is never empty")
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.history
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    pub fn stop_reason(&self) -> StopReason {
        self.stop
    }

    pub fn grid(&self) -> &Grid {
        self.images[0].grid()
    }

    /// Writes `image_XXX.csv` per image and `path.json` with the energy history.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, u) in self.images.iter().enumerate() {
            crate::io::save_complex(u, &dir.join(format!("image_{i:03}.csv")))?;
        }
        let doc = PathDump {
            images: self.len(),
            sweeps: self.sweeps,
            stop_reason: self.stop,
            arclength: self.arclength.clone(),
            energies: self.history.clone(),
        };
        let f = fs::File::create(dir.join("path.json"))?;
        serde_json::to_writer_pretty(f, &doc)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PathDump {
    images: usize,
    sweeps: usize,
    stop_reason: StopReason,
    arclength: Vec<f64>,
    energies: Vec<Vec<f64>>,
}

fn l2_step(a: &ComplexField, b: &ComplexField) -> f64 {
    a.l2_distance(b)
}

fn normalized_arclength(images: &[ComplexField]) -> Result<Vec<f64>> {
    let mut s = vec![0.0];
    for w in images.windows(2) {
        s.push(s[s.len() - 1] + l2_step(&w[0], &w[1]));
    }
    let total = s[s.len() - 1];
    if !(total > 0.0) {
        return Err(Error::DegeneratePath("path has zero length".into()));
    }
    Ok(s.iter().map(|v| v / total).collect())
}

/// Tanh ramp from 0 at `s = 0` to 1 at `s = √ε`.
fn dip_factor(x: f64, x0: f64, half_width: f64, eps: f64) -> f64 {
    let s = (x - x0).abs() - half_width;
    if s <= 0.0 {
        return 0.0;
    }
    let se = eps.sqrt();
    if s >= se {
        return 1.0;
    }
    let k = std::f64::consts::SQRT_2 * eps;
    (s / k).tanh() / (se / k).tanh()
}

/// Three-stage path from `ua` to `ub` through a modulus zero at `x = 1/2`.
pub fn init_path(ua: &ComplexField, ub: &ComplexField, k: usize, params: &ModelParams) -> Result<PathEnsemble> {
    init_path_at(ua, ub, k, params, 0.5)
}

/// As [`init_path`] with the modulus zero centred at `x0`.
pub fn init_path_at(
    ua: &ComplexField,
    ub: &ComplexField,
    k: usize,
    params: &ModelParams,
    x0: f64,
) -> Result<PathEnsemble> {
    params.validate()?;
    if k < MIN_IMAGES {
        return Err(Error::InvalidParameter(format!("need at least {MIN_IMAGES} images, got {k}")));
    }
    if ua.grid() != ub.grid() {
        return Err(Error::InvalidGrid("endpoints live on different grids".into()));
    }
    if !(x0 > 0.0 && x0 < 1.0) {
        return Err(Error::InvalidParameter(format!("dip centre {x0} not interior")));
    }
    let (ma, mb) = (winding_number(ua)?, winding_number(ub)?);
    if ma == mb {
        return Err(Error::DegeneratePath(format!("both endpoints have winding {ma}")));
    }
    let pa = unwrap_phase(ua, 1e-12)?;
    let pb = unwrap_phase(ub, 1e-12)?;
    let g = *ua.grid();
    let alpha = ua.alpha();
    let hw = (params.eps * params.eps).max(1.5 * g.h());
    let dip: Vec<f64> = g.nodes().map(|x| dip_factor(x, x0, hw, params.eps)).collect();
    let shift = -2.0 * PI * (mb - ma) as f64;

    let mut images = Vec::with_capacity(k);
    images.push(ua.clone());
    for i in 1..k - 1 {
        let s = i as f64 / (k - 1) as f64;
        let values: Vec<[f64; 2]> = (0..g.n())
            .map(|j| {
                let x = g.x(j);
                let (r, t) = if s <= 1.0 / 3.0 {
                    let t = 3.0 * s;
                    (pa.rho()[j] * (1.0 - t + t * dip[j]), pa.theta()[j])
                } else if s <= 2.0 / 3.0 {
                    let t = 3.0 * s - 1.0;
                    let r = ((1.0 - t) * pa.rho()[j] + t * pb.rho()[j]) * dip[j];
                    let step = if x > x0 { shift * t } else { 0.0 };
                    (r, (1.0 - t) * pa.theta()[j] + t * pb.theta()[j] + step)
                } else {
                    let t = 3.0 * s - 2.0;
                    (pb.rho()[j] * (t + (1.0 - t) * dip[j]), pb.theta()[j])
                };
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        images.push(ComplexField::with_boundary(g, values, alpha)?);
    }
    images.push(ub.clone());
    PathEnsemble::new(images, params)
}

/// Highest image of a path.
#[derive(Clone, Debug)]
pub struct Barrier {
    pub value: f64,
    pub index: usize,
    pub field: ComplexField,
    /// Max-norm of the energy gradient at the top image; reported, not thresholded.
    pub grad_max_norm: f64,
}

pub fn barrier(p: &PathEnsemble, params: &ModelParams) -> Barrier {
    let e = p.energies();
    let index = (0..e.len()).fold(0, |b, i| if e[i] > e[b] { i } else { b });
    let field = p.images[index].clone();
    let g = crate::energy::grad_energy_eps(&field, params);
    let n = g.len();
    let grad_max_norm = g[1..n - 1]
        .iter()
        .fold(0.0f64, |m, v| m.max(v[0].abs()).max(v[1].abs()));
    Barrier {
        value: e[index],
        index,
        field,
        grad_max_norm,
    }
}

/// A stationary point found by Newton iteration on the gradient.
#[derive(Clone, Debug)]
pub struct CriticalPoint {
    pub field: ComplexField,
    pub energy: f64,
    pub grad_max_norm: f64,
    /// Negative eigenvalues of the Hessian at the final iterate.
    pub morse_index: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Undamped-in-direction Newton iteration `x ← x − t H⁻¹ g` with backtracking
/// on `‖g‖²`; converges to whichever critical point is nearby, saddles
/// included.
pub fn refine_critical_point(
    u: &ComplexField,
    params: &ModelParams,
    tol: f64,
    max_iters: usize,
) -> Result<CriticalPoint> {
    params.validate()?;
    let obj = CartObjective::new(u, params);
    let mut x = u.interior();
    let sq = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>();
    let mut g = obj.gradient(&x);
    let mut iterations = 0;
    let max_abs = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while max_abs(&g) > tol && iterations < max_iters {
        let Some(f) = obj.hessian(&x).ldlt() else {
            break;
        };
        let d = f.solve(&g);
        let g2 = sq(&g);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - t * b).collect();
            let gt = obj.gradient(&xt);
            if sq(&gt) < (1.0 - 1e-4 * t) * g2 {
                next = Some((xt, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((xt, gt)) = next else {
            break;
        };
        x = xt;
        g = gt;
        iterations += 1;
    }
    let morse_index = obj.hessian(&x).ldlt().map(|f| f.negative_count());
    let field = u.with_interior(&x);
    let grad_max_norm = max_abs(&g);
    Ok(CriticalPoint {
        energy: energy_eps(&field, params).total,
        field,
        grad_max_norm,
        morse_index,
        iterations,
        converged: grad_max_norm <= tol,
    })
}

/// One safeguarded LM-Newton step of length at most `cap` in the L² metric.
fn descend(u: &ComplexField, params: &ModelParams, mu: &mut f64, cap: f64) -> ComplexField {
    let obj = CartObjective::new(u, params);
    let x = u.interior();
    let e = obj.energy(&x);
    let g = obj.gradient(&x);
    let hess = obj.hessian(&x);
    let scale = hess.max_abs_diagonal().max(1e-300);
    let h = u.grid().h();
    let fixed = vec![false; x.len()];
    for _ in 0..8 {
        let mut d = lm_direction(hess.clone(), &g, mu, &fixed);
        let len = (h * d.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if len > cap {
            let s = cap / len;
            d.iter_mut().for_each(|v| *v *= s);
        }
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        for _ in 0..30 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let et = obj.energy(&xt);
            if et.is_finite() && et <= e + 1e-4 * t * slope && et <= e {
                if t == 1.0 {
                    *mu *= 0.25;
                }
                return u.with_interior(&xt);
            }
            t *= 0.5;
        }
        *mu = (*mu * 10.0).max(1e-6 * scale);
    }
    u.clone()
}

/// Resamples interior images at equal arclength by linear interpolation.
fn reparametrize(images: &[ComplexField]) -> Result<(Vec<ComplexField>, Vec<f64>)> {
    let s = normalized_arclength(images)?;
    let k = images.len();
    let g = *images[0].grid();
    let alpha = images[0].alpha();
    let mut out = Vec::with_capacity(k);
    out.push(images[0].clone());
    let mut seg = 0;
    for i in 1..k - 1 {
        let target = i as f64 / (k - 1) as f64;
        while seg + 1 < k - 1 && s[seg + 1] < target {
            seg += 1;
        }
        let span = s[seg + 1] - s[seg];
        let w = if span > 0.0 { ((target - s[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (images[seg].values(), images[seg + 1].values());
        let values = a
            .iter()
            .zip(b)
            .map(|(p, q)| [p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1])])
            .collect();
        out.push(ComplexField::with_boundary(g, values, alpha)?);
    }
    out.push(images[k - 1].clone());
    let arclength = normalized_arclength(&out)?;
    Ok((out, arclength))
}

/// Relaxes the interior images toward a minimum-energy path.
pub fn relax_path(p: PathEnsemble, params: &ModelParams, opts: &StringOptions) -> Result<PathEnsemble> {
    params.validate()?;
    let mut path = p;
    let k = path.len();
    let mut mus = vec![0.0f64; k];
    let mut fraction = opts.step_fraction;
    let mut tops = vec![barrier_value(path.energies())];
    let mut sweep = 0;
    path.stop = StopReason::MaxSweeps;
    while sweep < opts.max_sweeps {
        sweep += 1;
        let spacing = total_length(&path.images) / (k - 1) as f64;
        let cap = fraction * spacing;
        let stepped: Vec<(ComplexField, f64)> = (1..k - 1)
            .into_par_iter()
            .map(|i| {
                let mut mu = mus[i];
                let u = descend(&path.images[i], params, &mut mu, cap);
                (u, mu)
            })
            .collect();
        let mut trial = Vec::with_capacity(k);
        trial.push(path.images[0].clone());
        let mut new_mus = mus.clone();
        for (i, (u, mu)) in stepped.into_iter().enumerate() {
            trial.push(u);
            new_mus[i + 1] = mu;
        }
        trial.push(path.images[k - 1].clone());
        let (images, arclength) = reparametrize(&trial)?;
        let energies: Vec<f64> = images.par_iter().map(|u| energy_eps(u, params).total).collect();
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::Divergence {
                iterations: sweep,
                last_energy: barrier_value(&energies),
            });
        }
        let top = barrier_value(&energies);
        let previous = tops[tops.len() - 1];
        if top > previous + opts.slack {
            fraction *= 0.5;
            if fraction < 1e-6 {
                path.stop = StopReason::Stalled;
                break;
            }
            continue;
        }
        fraction = (fraction * 1.25).min(opts.step_fraction);
        mus = new_mus;
        path.images = images;
        path.arclength = arclength;
        path.history.push(energies);
        tops.push(top);
        path.sweeps = sweep;
        let n = tops.len();
        if n > opts.stall_window && (tops[n - 1 - opts.stall_window] - top).abs() < opts.stall_tol {
            path.stop = StopReason::Converged;
            break;
        }
    }
    Ok(path)
}

fn barrier_value(e: &[f64]) -> f64 {
    e.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn total_length(images: &[ComplexField]) -> f64 {
    images.windows(2).map(|w| l2_step(&w[0], &w[1])).sum()
}
