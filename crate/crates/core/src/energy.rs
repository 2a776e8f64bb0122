//! Discrete energies on the midpoint cell rule and their exact derivatives.
//!
//! Per cell with end values `a = u_i`, `b = u_{i+1}`:
//! `u′ ≈ (b − a)/h`, `ū = (a + b)/2`, and the twist density
//! `ū₁u₂′ − ū₂u₁′` collapses to `(a₁b₂ − a₂b₁)/h`.

use serde::{Deserialize, Serialize};

use crate::banded::SymBanded;
use crate::error::{Error, Result};
use crate::field::{ComplexField, PolarField};
use crate::params::ModelParams;

pub use crate::jump::{energy_gamma, JUMP_COST};

/// The three energy contributions and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub gradient: f64,
    pub potential: f64,
    pub twist: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn from_sums(g: &Neumaier, p: &Neumaier, w: &Neumaier) -> Self {
        let (gradient, potential, twist) = (g.value(), p.value(), w.value());
        Self {
            gradient,
            potential,
            twist,
            total: gradient + potential + twist,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Compensated (Neumaier) summation.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `ε`, `L` and the twist target `τ` (`2πN` or `2πε^{-β}`).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Coeffs {
    pub eps: f64,
    pub l: f64,
    pub tau: f64,
}

impl From<&ModelParams> for Coeffs {
    fn from(p: &ModelParams) -> Self {
        Self {
            eps: p.eps,
            l: p.l,
            tau: p.target_rate(),
        }
    }
}

#[inline]
fn cart_cell(a: [f64; 2], b: [f64; 2], h: f64, c: &Coeffs) -> (f64, f64, f64) {
    let d0 = b[0] - a[0];
    let d1 = b[1] - a[1];
    let m0 = 0.5 * (a[0] + b[0]);
    let m1 = 0.5 * (a[1] + b[1]);
    let s = m0 * m0 + m1 * m1 - 1.0;
    let t = (a[0] * b[1] - a[1] * b[0]) / h - c.tau;
    (
        0.5 * c.eps / h * (d0 * d0 + d1 * d1),
        0.25 * h / c.eps * s * s,
        0.5 * h * c.l * t * t,
    )
}

pub(crate) fn cart_energy(values: &[[f64; 2]], h: f64, c: &Coeffs) -> EnergyBreakdown {
    let (mut g, mut p, mut w) = (Neumaier::default(), Neumaier::default(), Neumaier::default());
    for cell in values.windows(2) {
        let (eg, ep, ew) = cart_cell(cell[0], cell[1], h, c);
        g.add(eg);
        p.add(ep);
        w.add(ew);
    }
    EnergyBreakdown::from_sums(&g, &p, &w)
}

/// Gradient of one cell with respect to `(a₁, a₂, b₁, b₂)`.
#[inline]
fn cart_cell_grad(a: [f64; 2], b: [f64; 2], h: f64, c: &Coeffs) -> [f64; 4] {
    let ke = c.eps / h;
    let d0 = b[0] - a[0];
    let d1 = b[1] - a[1];
    let m0 = 0.5 * (a[0] + b[0]);
    let m1 = 0.5 * (a[1] + b[1]);
    let s = m0 * m0 + m1 * m1 - 1.0;
    let kp = 0.5 * h / c.eps * s;
    let cw = c.l * ((a[0] * b[1] - a[1] * b[0]) / h - c.tau);
    [
        -ke * d0 + kp * m0 + cw * b[1],
        -ke * d1 + kp * m1 - cw * b[0],
        ke * d0 + kp * m0 - cw * a[1],
        ke * d1 + kp * m1 + cw * a[0],
    ]
}

/// Hessian of one cell with respect to `(a₁, a₂, b₁, b₂)`.
fn cart_cell_hessian(a: [f64; 2], b: [f64; 2], h: f64, c: &Coeffs) -> [[f64; 4]; 4] {
    let ke = c.eps / h;
    let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let s = m[0] * m[0] + m[1] * m[1] - 1.0;
    let kp = 0.5 * h / c.eps;
    let t = [b[1] / h, -b[0] / h, -a[1] / h, a[0] / h];
    let cw = (a[0] * b[1] - a[1] * b[0]) / h - c.tau;
    let hl = h * c.l;
    let mut hm = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let same = i % 2 == j % 2;
            let g = if same {
                if (i < 2) == (j < 2) {
                    ke
                } else {
                    -ke
                }
            } else {
                0.0
            };
            let p = kp * (m[i % 2] * m[j % 2] + if same { 0.5 * s } else { 0.0 });
            hm[i][j] = g + p + hl * t[i] * t[j];
        }
    }
    let k = hl * cw / h;
    hm[0][3] += k;
    hm[3][0] += k;
    hm[1][2] -= k;
    hm[2][1] -= k;
    hm
}

pub(crate) fn cart_gradient(values: &[[f64; 2]], h: f64, c: &Coeffs) -> Vec<[f64; 2]> {
    let n = values.len();
    let mut g = vec![[0.0; 2]; n];
    for i in 0..n - 1 {
        let cg = cart_cell_grad(values[i], values[i + 1], h, c);
        g[i][0] += cg[0];
        g[i][1] += cg[1];
        g[i + 1][0] += cg[2];
        g[i + 1][1] += cg[3];
    }
    g[0] = [0.0; 2];
    g[n - 1] = [0.0; 2];
    g
}

/// Assembles the cell blocks of `local` into the interior-dof band matrix.
fn assemble(n: usize, local: impl Fn(usize) -> [[f64; 4]; 4]) -> SymBanded {
    let mut hm = SymBanded::zeros(2 * (n - 2), 3);
    for cell in 0..n - 1 {
        let lh = local(cell);
        for (li, node_i) in [(0, cell), (2, cell + 1)] {
            if node_i == 0 || node_i == n - 1 {
                continue;
            }
            for (lj, node_j) in [(0, cell), (2, cell + 1)] {
                if node_j == 0 || node_j == n - 1 || node_j > node_i {
                    continue;
                }
                for p in 0..2 {
                    for q in 0..2 {
                        let gi = 2 * (node_i - 1) + p;
                        let gj = 2 * (node_j - 1) + q;
                        if gi >= gj {
                            hm.add(gi, gj, lh[li + p][lj + q]);
                        }
                    }
                }
            }
        }
    }
    hm
}

pub(crate) fn cart_hessian(values: &[[f64; 2]], h: f64, c: &Coeffs) -> SymBanded {
    assemble(values.len(), |i| cart_cell_hessian(values[i], values[i + 1], h, c))
}

/// `E_ε(u)` on the cell rule; the twist target follows `params.twist`.
pub fn energy_eps(u: &ComplexField, params: &ModelParams) -> EnergyBreakdown {
    cart_energy(u.values(), u.grid().h(), &Coeffs::from(params))
}

/// Exact derivative of [`energy_eps`]; end-node entries are zero.
pub fn grad_energy_eps(u: &ComplexField, params: &ModelParams) -> Vec<[f64; 2]> {
    cart_gradient(u.values(), u.grid().h(), &Coeffs::from(params))
}

/// Polar cell quantities: `|b−a|²`, `|ū|²`, `T` written in `(ρ, θ)`.
#[inline]
fn polar_cell_parts(ra: f64, rb: f64, phi: f64, h: f64) -> (f64, f64, f64, f64, f64) {
    let r = ra * rb;
    let s = ra * ra + rb * rb;
    let (sn, cs) = phi.sin_cos();
    let diff = s - 2.0 * r * cs;
    let msq = 0.25 * (s + 2.0 * r * cs);
    let t = r * sn / h;
    (diff, msq, t, sn, cs)
}

pub(crate) fn polar_energy(rho: &[f64], theta: &[f64], h: f64, c: &Coeffs) -> EnergyBreakdown {
    let (mut g, mut p, mut w) = (Neumaier::default(), Neumaier::default(), Neumaier::default());
    for i in 0..rho.len() - 1 {
        let (diff, msq, t, _, _) = polar_cell_parts(rho[i], rho[i + 1], theta[i + 1] - theta[i], h);
        let q = msq - 1.0;
        let tw = t - c.tau;
        g.add(0.5 * c.eps / h * diff);
        p.add(0.25 * h / c.eps * q * q);
        w.add(0.5 * h * c.l * tw * tw);
    }
    EnergyBreakdown::from_sums(&g, &p, &w)
}

/// `∂(cell)/∂(ρ_a, ρ_b, Δθ)`.
#[inline]
fn polar_cell_grad(ra: f64, rb: f64, phi: f64, h: f64, c: &Coeffs) -> [f64; 3] {
    let (_, msq, t, sn, cs) = polar_cell_parts(ra, rb, phi, h);
    let q = msq - 1.0;
    let cw = c.l * (t - c.tau);
    let ke = c.eps / h;
    let kp = 0.25 * h / c.eps * q;
    let r = ra * rb;
    [
        ke * (ra - rb * cs) + kp * (ra + rb * cs) + cw * rb * sn,
        ke * (rb - ra * cs) + kp * (rb + ra * cs) + cw * ra * sn,
        ke * r * sn - kp * r * sn + cw * r * cs,
    ]
}

pub(crate) fn polar_gradient(rho: &[f64], theta: &[f64], h: f64, c: &Coeffs) -> (Vec<f64>, Vec<f64>) {
    let n = rho.len();
    let mut gr = vec![0.0; n];
    let mut gt = vec![0.0; n];
    for i in 0..n - 1 {
        let g = polar_cell_grad(rho[i], rho[i + 1], theta[i + 1] - theta[i], h, c);
        gr[i] += g[0];
        gr[i + 1] += g[1];
        gt[i] -= g[2];
        gt[i + 1] += g[2];
    }
    gr[0] = 0.0;
    gr[n - 1] = 0.0;
    gt[0] = 0.0;
    gt[n - 1] = 0.0;
    (gr, gt)
}

/// Polar cell Hessian in `(ρ_a, θ_a, ρ_b, θ_b)` by the chain rule through
/// the Cartesian cell.
fn polar_cell_hessian(ra: f64, ta: f64, rb: f64, tb: f64, h: f64, c: &Coeffs) -> [[f64; 4]; 4] {
    let (sa, ca) = ta.sin_cos();
    let (sb, cb) = tb.sin_cos();
    let a = [ra * ca, ra * sa];
    let b = [rb * cb, rb * sb];
    let hc = cart_cell_hessian(a, b, h, c);
    let gc = cart_cell_grad(a, b, h, c);
    let mut jac = [[0.0; 4]; 4];
    jac[0][0] = ca;
    jac[1][0] = sa;
    jac[0][1] = -ra * sa;
    jac[1][1] = ra * ca;
    jac[2][2] = cb;
    jac[3][2] = sb;
    jac[2][3] = -rb * sb;
    jac[3][3] = rb * cb;
    let mut hp = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = 0.0;
            for k in 0..4 {
                if jac[k][i] == 0.0 {
                    continue;
                }
                for l in 0..4 {
                    s += jac[k][i] * hc[k][l] * jac[l][j];
                }
            }
            hp[i][j] = s;
        }
    }
    let mix_a = -sa * gc[0] + ca * gc[1];
    let mix_b = -sb * gc[2] + cb * gc[3];
    hp[0][1] += mix_a;
    hp[1][0] += mix_a;
    hp[1][1] += -ra * (ca * gc[0] + sa * gc[1]);
    hp[2][3] += mix_b;
    hp[3][2] += mix_b;
    hp[3][3] += -rb * (cb * gc[2] + sb * gc[3]);
    hp
}

pub(crate) fn polar_hessian(rho: &[f64], theta: &[f64], h: f64, c: &Coeffs) -> SymBanded {
    assemble(rho.len(), |i| {
        polar_cell_hessian(rho[i], theta[i], rho[i + 1], theta[i + 1], h, c)
    })
}

/// Polar form of [`energy_eps`]; equals the Cartesian value of
/// `to_cartesian(p)` up to rounding.
pub fn energy_eps_polar(p: &PolarField, params: &ModelParams) -> EnergyBreakdown {
    polar_energy(p.rho(), p.theta(), p.grid().h(), &Coeffs::from(params))
}

/// Exact derivatives of [`energy_eps_polar`] in `ρ` and `θ`; end entries are zero.
pub fn grad_energy_eps_polar(p: &PolarField, params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    polar_gradient(p.rho(), p.theta(), p.grid().h(), &Coeffs::from(params))
}

/// Per-cell `∂E/∂(θ_{i+1} − θ_i)`, the discrete analogue of
/// `ερ²θ′ + Lρ²(ρ²θ′ − 2πN)`. At a `θ`-stationary field it is constant.
pub fn twist_flux(p: &PolarField, params: &ModelParams) -> Vec<f64> {
    let c = Coeffs::from(params);
    let h = p.grid().h();
    let (rho, theta) = (p.rho(), p.theta());
    (0..rho.len() - 1)
        .map(|i| polar_cell_grad(rho[i], rho[i + 1], theta[i + 1] - theta[i], h, &c)[2])
        .collect()
}

/// `F_ε(w) = Ẽ_ε(w e^{2πi⌊ε^{-β}⌋x})`.
///
/// The carrier phase is expanded analytically per cell: with `Δφ = 2π⌊ε^{-β}⌋h`,
/// `|u_{i+1} − u_i|² = |a|² + |b|² − 2(a·b cos Δφ − a×b sin Δφ)` and the cell
/// twist is `(a×b cos Δφ + a·b sin Δφ)/h`. This reproduces the unrescaled
/// discrete energy to rounding.
pub fn energy_rescaled(w: &ComplexField, params: &ModelParams) -> Result<EnergyBreakdown> {
    if params.beta().is_none() {
        return Err(Error::InvalidParameter(
            "rescaled energy needs a beta twist parameter".into(),
        ));
    }
    params.validate()?;
    let c = Coeffs::from(params);
    let h = w.grid().h();
    let k = params.floor_twist() as f64;
    let (sn, cs) = (2.0 * std::f64::consts::PI * k * h).sin_cos();
    let (mut g, mut p, mut t) = (Neumaier::default(), Neumaier::default(), Neumaier::default());
    for cell in w.values().windows(2) {
        let (a, b) = (cell[0], cell[1]);
        let aa = a[0] * a[0] + a[1] * a[1];
        let bb = b[0] * b[0] + b[1] * b[1];
        let dot = a[0] * b[0] + a[1] * b[1];
        let cross = a[0] * b[1] - a[1] * b[0];
        let re = dot * cs - cross * sn;
        let im = cross * cs + dot * sn;
        let diff = aa + bb - 2.0 * re;
        let q = 0.25 * (aa + bb + 2.0 * re) - 1.0;
        let tw = im / h - c.tau;
        g.add(0.5 * c.eps / h * diff);
        p.add(0.25 * h / c.eps * q * q);
        t.add(0.5 * h * c.l * tw * tw);
    }
    Ok(EnergyBreakdown::from_sums(&g, &p, &t))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::field::{make_grid, to_cartesian, twist_field, uniform_twist_field, Grid};

    /// Smooth random field: a few random Fourier modes in modulus and phase
    /// plus small node noise.
    fn random_polar(grid: Grid, rng: &mut ChaCha8Rng, winding: i64, alpha: f64) -> PolarField {
        let modes: Vec<(f64, f64, f64)> = (1..=4)
            .map(|k| (rng.gen_range(-0.2..0.2), rng.gen_range(-0.8..0.8), k as f64))
            .collect();
        let rate = 2.0 * PI * winding as f64 + alpha;
        let mut rho = Vec::with_capacity(grid.n());
        let mut theta = Vec::with_capacity(grid.n());
        for x in grid.nodes() {
            let mut r = 1.0;
            let mut t = rate * x;
            for &(ar, at, k) in &modes {
                r += ar * (PI * k * x).sin();
                t += at * (PI * k * x).sin();
            }
            rho.push(r + rng.gen_range(-0.01..0.01));
            theta.push(t + rng.gen_range(-0.01..0.01));
        }
        PolarField::with_boundary(grid, rho, theta, winding, alpha).unwrap()
    }

    fn rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = analytic
            .iter()
            .zip(fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        err / scale.max(1e-300)
    }

    fn fd_cartesian(u: &ComplexField, params: &ModelParams, step: f64) -> Vec<f64> {
        let c = Coeffs::from(params);
        let h = u.grid().h();
        let mut v = u.values().to_vec();
        let n = v.len();
        let mut out = Vec::new();
        for i in 1..n - 1 {
            for k in 0..2 {
                let orig = v[i][k];
                v[i][k] = orig + step;
                let ep = cart_energy(&v, h, &c).total;
                v[i][k] = orig - step;
                let em = cart_energy(&v, h, &c).total;
                v[i][k] = orig;
                out.push((ep - em) / (2.0 * step));
            }
        }
        out
    }

    #[test]
    fn cartesian_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &n in &[51, 101, 501] {
            let g = make_grid(n).unwrap();
            let params = ModelParams::new(0.05, 0.7, 2, 1.2).unwrap();
            let u = to_cartesian(&random_polar(g, &mut rng, 1, 1.2));
            let grad = grad_energy_eps(&u, &params);
            let an: Vec<f64> = grad[1..n - 1].iter().flat_map(|v| [v[0], v[1]]).collect();
            let fd = fd_cartesian(&u, &params, 1e-6);
            assert!(rel_err(&an, &fd) < 1e-6, "n={n}: {}", rel_err(&an, &fd));
        }
    }

    #[test]
    fn polar_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = ModelParams::new(0.02, 1.5, 1, 0.4).unwrap();
        let c = Coeffs::from(&params);
        for &n in &[51, 101] {
            let g = make_grid(n).unwrap();
            let p = random_polar(g, &mut rng, 2, 0.4);
            let (gr, gt) = grad_energy_eps_polar(&p, &params);
            let (mut rho, mut theta) = (p.rho().to_vec(), p.theta().to_vec());
            let h = g.h();
            let step = 1e-6;
            let (mut fr, mut ft) = (vec![], vec![]);
            for i in 1..n - 1 {
                let o = rho[i];
                rho[i] = o + step;
                let ep = polar_energy(&rho, &theta, h, &c).total;
                rho[i] = o - step;
                let em = polar_energy(&rho, &theta, h, &c).total;
                rho[i] = o;
                fr.push((ep - em) / (2.0 * step));
                let o = theta[i];
                theta[i] = o + step;
                let ep = polar_energy(&rho, &theta, h, &c).total;
                theta[i] = o - step;
                let em = polar_energy(&rho, &theta, h, &c).total;
                theta[i] = o;
                ft.push((ep - em) / (2.0 * step));
            }
            assert!(rel_err(&gr[1..n - 1], &fr) < 1e-6);
            assert!(rel_err(&gt[1..n - 1], &ft) < 1e-6);
        }
    }

    fn hessian_fd_check(values: Vec<f64>, hess: &SymBanded, grad: impl Fn(&[f64]) -> Vec<f64>) {
        let step = 1e-6;
        let m = values.len();
        let mut v = values;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..m {
            let o = v[j];
            v[j] = o + step;
            let gp = grad(&v);
            v[j] = o - step;
            let gm = grad(&v);
            v[j] = o;
            for i in j.saturating_sub(3)..(j + 4).min(m) {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                worst = worst.max((fd - hess.get(i, j)).abs());
                scale = scale.max(hess.get(i, j).abs());
            }
        }
        assert!(worst / scale < 1e-6, "hessian mismatch {worst} / {scale}");
    }

    #[test]
    fn cartesian_hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = make_grid(41).unwrap();
        let params = ModelParams::new(0.03, 0.9, 1, 2.0).unwrap();
        let c = Coeffs::from(&params);
        let u = to_cartesian(&random_polar(g, &mut rng, 0, 2.0));
        let hess = cart_hessian(u.values(), g.h(), &c);
        let base = u.clone();
        hessian_fd_check(u.interior(), &hess, |x| {
            let f = base.with_interior(x);
            cart_gradient(f.values(), g.h(), &c)[1..g.n() - 1]
                .iter()
                .flat_map(|v| [v[0], v[1]])
                .collect()
        });
    }

    #[test]
    fn polar_hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = make_grid(41).unwrap();
        let params = ModelParams::new(0.03, 0.9, 1, 2.0).unwrap();
        let c = Coeffs::from(&params);
        let p = random_polar(g, &mut rng, 1, 2.0);
        let hess = polar_hessian(p.rho(), p.theta(), g.h(), &c);
        let base = p.clone();
        hessian_fd_check(p.interior(), &hess, |x| {
            let f = base.with_interior(x);
            let (gr, gt) = polar_gradient(f.rho(), f.theta(), g.h(), &c);
            (1..g.n() - 1).flat_map(|i| [gr[i], gt[i]]).collect()
        });
    }

    #[test]
    fn uniform_twist_converges_to_closed_form() {
        let params = ModelParams::new(0.01, 1.0, 2, 0.0).unwrap();
        let exact = 2.0 * (PI * 2.0).powi(2) * 0.01;
        assert!((exact - 0.789568).abs() < 1e-6);
        let errs: Vec<f64> = [801, 1601, 3201, 6401]
            .iter()
            .map(|&n| {
                let u = uniform_twist_field(2, &params, make_grid(n).unwrap());
                (energy_eps(&u, &params).total - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.8..=2.2).contains(&order), "order {order}");
        }
    }

    #[test]
    fn constant_field_has_zero_energy_and_gradient() {
        let g = make_grid(33).unwrap();
        let params = ModelParams::new(0.3, 2.0, 0, 0.0).unwrap();
        let u = ComplexField::from_fn(g, 0.0, |_| [1.0, 0.0]).unwrap();
        assert_eq!(energy_eps(&u, &params).total, 0.0);
        assert!(grad_energy_eps(&u, &params).iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn off_target_twist_matches_discrete_sum() {
        let (eps, l) = (0.05, 0.5);
        let params = ModelParams::new(eps, l, 2, 0.0).unwrap();
        let n = 2001;
        let g = make_grid(n).unwrap();
        let u = uniform_twist_field(1, &params, g);
        let e = energy_eps(&u, &params);
        // Independent sum over cells using the closed-form chord of the unit circle.
        let h = g.h();
        let dphi = 2.0 * PI * h;
        let chord2 = 2.0 - 2.0 * dphi.cos();
        let m2 = (2.0 + 2.0 * dphi.cos()) / 4.0;
        let t = dphi.sin() / h - 4.0 * PI;
        let reference = (n - 1) as f64
            * (0.5 * eps / h * chord2 + 0.25 * h / eps * (m2 - 1.0).powi(2) + 0.5 * h * l * t * t);
        assert!((e.total - reference).abs() < 1e-10 * reference);
        let continuum = eps * (2.0 * PI).powi(2) / 2.0 + l / 2.0 * (2.0 * PI).powi(2);
        assert!((e.total - continuum).abs() < 1e-4);
    }

    #[test]
    fn polar_uniform_twist_matches_cartesian() {
        let g = make_grid(257).unwrap();
        let params = ModelParams::new(0.02, 0.8, 1, 0.9).unwrap();
        for m in -2..=2 {
            let p = PolarField::uniform(g, m, 0.9);
            let a = energy_eps_polar(&p, &params).total;
            let b = energy_eps(&to_cartesian(&p), &params).total;
            assert!((a - b).abs() < 1e-10 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn matched_twist_has_no_penalty_or_phase_force() {
        let g = make_grid(1025).unwrap();
        let params = ModelParams::new(0.1, 1.0, 3, 0.0).unwrap();
        let p = PolarField::uniform(g, 3, 0.0);
        let e = energy_eps_polar(&p, &params);
        // The cell twist is sin(Δθ)/h, so it matches 2πN up to O(h²).
        assert!(e.twist < 1e-6);
        let (_, gt) = grad_energy_eps_polar(&p, &params);
        assert!(gt.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn depressed_modulus_costs_potential() {
        let g = make_grid(101).unwrap();
        let params = ModelParams::new(0.01, 1.0, 0, 0.0).unwrap();
        let mut rho = vec![0.5; 101];
        rho[0] = 1.0;
        rho[100] = 1.0;
        let p = PolarField::with_boundary(g, rho, vec![0.0; 101], 0, 0.0).unwrap();
        let e = energy_eps_polar(&p, &params);
        assert!(e.potential > e.gradient && e.potential > e.twist);
        assert!(e.potential > 10.0);
    }

    #[test]
    fn twist_flux_is_constant_for_uniform_twist() {
        let g = make_grid(65).unwrap();
        let params = ModelParams::new(0.05, 0.5, 2, 1.0).unwrap();
        let flux = twist_flux(&PolarField::uniform(g, 1, 1.0), &params);
        let spread = flux.iter().fold(0.0f64, |m, f| m.max((f - flux[0]).abs()));
        assert!(spread < 1e-12);
    }

    #[test]
    fn rescaled_constant_w_at_integer_power() {
        let eps = 0.5f64.powi(4);
        let params = ModelParams::rescaled(eps, 1.0, 0.25, 0.0).unwrap();
        let g = make_grid(801).unwrap();
        let w = ComplexField::from_fn(g, 0.0, |_| [1.0, 0.0]).unwrap();
        let f = energy_rescaled(&w, &params).unwrap();
        let u = twist_field(4.0 * PI, 0.0, g);
        let direct = energy_eps(&u, &params);
        assert!((f.total - direct.total).abs() < 1e-12 * direct.total);
        let continuum = eps / 2.0 * (4.0 * PI).powi(2);
        assert!((f.gradient - continuum).abs() < 1e-3 * continuum);
        assert!(f.twist < 1e-6);
    }

    #[test]
    fn rescaled_constant_w_fractional_twist() {
        let eps = crate::params::eps_for_twist(0.25, 3, 0.4);
        let l = 0.7;
        let params = ModelParams::rescaled(eps, l, 0.25, 0.0).unwrap();
        let w = ComplexField::from_fn(make_grid(4001).unwrap(), 0.0, |_| [1.0, 0.0]).unwrap();
        let f = energy_rescaled(&w, &params).unwrap();
        let expected = l / 2.0 * (2.0 * PI * params.fractional_twist()).powi(2);
        // The cell twist of the carrier is sin(2πKh)/h, an O(h²) deviation from 2πK.
        assert!((f.twist - expected).abs() < 1e-4 * expected);
    }

    #[test]
    fn rescaled_requires_beta() {
        let params = ModelParams::new(0.1, 1.0, 1, 0.0).unwrap();
        let w = ComplexField::from_fn(make_grid(5).unwrap(), 0.0, |_| [1.0, 0.0]).unwrap();
        assert!(matches!(energy_rescaled(&w, &params), Err(Error::InvalidParameter(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn polar_and_cartesian_agree(seed in any::<u64>(), m in -3i64..=3, alpha in 0.0..6.2f64,
                                     eps in 0.005..0.2f64, l in 0.05..3.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = make_grid(201).unwrap();
            let params = ModelParams::new(eps, l, 2, alpha).unwrap();
            let p = random_polar(g, &mut rng, m, alpha);
            let a = energy_eps_polar(&p, &params).total;
            let b = energy_eps(&to_cartesian(&p), &params).total;
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }

        #[test]
        fn terms_are_nonnegative(seed in any::<u64>(), alpha in 0.0..6.2f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = make_grid(64).unwrap();
            let params = ModelParams::new(0.05, 1.0, 1, alpha).unwrap();
            let values = (0..64).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
            let u = ComplexField::with_boundary(g, values, alpha).unwrap();
            let e = energy_eps(&u, &params);
            prop_assert!(e.gradient >= 0.0 && e.potential >= 0.0 && e.twist >= 0.0);
            prop_assert_eq!(e.total, e.gradient + e.potential + e.twist);
        }

        #[test]
        fn rescaled_identity(seed in any::<u64>(), k in 2u32..6, a in 0.05..0.95f64, alpha in 0.0..6.2f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps = crate::params::eps_for_twist(0.25, k, a);
            let params = ModelParams::rescaled(eps, 0.6, 0.25, alpha).unwrap();
            let g = make_grid(4001).unwrap();
            let w = to_cartesian(&random_polar(g, &mut rng, 0, alpha));
            let kk = params.floor_twist() as f64;
            let u = ComplexField::from_fn(g, alpha, |x| {
                let i = g.nearest(x);
                let v = w.values()[i];
                let (s, c) = (2.0 * PI * kk * x).sin_cos();
                [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
            }).unwrap();
            let f = energy_rescaled(&w, &params).unwrap().total;
            let e = energy_eps(&u, &params).total;
            prop_assert!((f - e).abs() < 1e-9 * e);
        }
    }
}
