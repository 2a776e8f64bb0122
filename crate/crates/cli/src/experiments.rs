//! The six experiment kinds. Each writes its tables into the output
//! directory and returns the acceptance checks relevant to it.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{Context, Result};
use cholesteric::asymptotics::{
    classify_e0a, extrapolate_eps, fitted_flux_constant, limit_flux_constant, phase_diagram_cell, phase_diagram_cell_with,
    predicted_local_energy, predicted_saddle_energy, predicted_theta_profile, weak_probe,
    microscale_v, h1_error, PhaseCell, RecoveryProfile,
};
use cholesteric::jump::JUMP_COST;
use cholesteric::lifting::{extract_jump_map, unwrap_phase, DEFAULT_Q};
use cholesteric::minimize::{
    minimize_free, minimize_winding_class, multistart_all, select_best, stationarity_probe, Strategy,
};
use cholesteric::saddle::{barrier, init_path, refine_critical_point, relax_path};
use cholesteric::{
    build_recovery_sequence, energy_eps, energy_gamma, eps_for_twist, make_grid, uniform_twist_field,
    ComplexField, JumpMap, ModelParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{stream_seed, write_atomic, write_csv, write_json, Check};

/// Checks, hard failures and artifact names produced by one experiment.
#[derive(Default)]
pub struct RunOutput {
    pub checks: Vec<Check>,
    pub failures: Vec<String>,
    pub artifacts: Vec<String>,
}

impl RunOutput {
    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }
}

fn field_csv(u: &ComplexField) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    cholesteric::io::write_complex(u, &mut buf)?;
    Ok(buf)
}

fn descending(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.dedup();
    v
}

// ---------------------------------------------------------------- minimize

#[derive(Serialize)]
struct MinimizeDoc<'a> {
    params: ModelParams,
    strategy: Option<Strategy>,
    report: cholesteric::minimize::ReportSummary,
    stationarity_probe: f64,
    energy_trace_len: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    winding_class: Option<&'a i64>,
}

pub fn minimize(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let params = cfg.params.model()?;
    let grid = make_grid(cfg.grid.n)?;
    let run = match cfg.minimize.winding {
        Some(m) => minimize_winding_class(m, cfg.minimize.rho0, &params, grid, &cfg.solver).map(|r| (None, r)),
        None => select_best(multistart_all(&params, grid, &Strategy::default_set(&params), &cfg.solver))
            .map(|s| (Some(s.strategy), s.report)),
    };
    let (strategy, report) = match run {
        Ok(r) => r,
        Err(e) => {
            out.failures.push(format!("minimize: {e}"));
            return Ok(out);
        }
    };
    let probe = stationarity_probe(&report, &params, stream_seed(cfg.seed, "minimize", 0), 20);
    let doc = MinimizeDoc {
        params,
        strategy,
        report: report.summary(),
        stationarity_probe: probe,
        energy_trace_len: report.energy_trace.len(),
        winding_class: cfg.minimize.winding.as_ref(),
    };
    write_json(&dir.join("report.json"), &doc)?;
    write_atomic(&dir.join("field.csv"), &field_csv(&report.field)?)?;
    out.artifacts.extend(["report.json".into(), "field.csv".into()]);
    if let Some(p) = &report.polar {
        let mut buf = Vec::new();
        cholesteric::io::write_polar(p, &mut buf)?;
        write_atomic(&dir.join("polar.csv"), &buf)?;
        out.artifacts.push("polar.csv".into());
    }
    out.check(
        "converged",
        report.converged,
        format!("grad {:.3e} vs tol {:.3e}", report.final_grad_norm, report.grad_tol),
    );
    out.check("energy_monotone", report.is_monotone(), format!("{} steps", report.iterations));
    out.check(
        "stationarity_probe",
        probe <= 10.0 * report.grad_tol,
        format!("max |central difference| {probe:.3e}"),
    );
    Ok(out)
}

// ------------------------------------------------------------ winding scan

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindingRow {
    #[serde(rename = "M")]
    pub m: i64,
    pub eps: f64,
    pub energy: f64,
    pub predicted: f64,
    pub converged: bool,
    pub constraint_active: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub rho_dev_over_eps: f64,
    pub theta_prime_rel_dev: f64,
    pub flux_fit: f64,
    pub flux_limit: f64,
    pub flux_error: f64,
    pub first_integral_dev: f64,
    pub status: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtrapolationRow {
    #[serde(rename = "M")]
    pub m: i64,
    pub predicted: f64,
    pub extrapolated: Option<f64>,
    pub order: Option<f64>,
    pub rel_error: Option<f64>,
    pub status: String,
}

fn winding_row(m: i64, eps: f64, cfg: &ExperimentConfig) -> WindingRow {
    let params = cfg.params.model().expect("validated").with_eps(eps);
    let predicted = predicted_local_energy(m, &params);
    let flux_limit = limit_flux_constant(m, &params);
    let mut row = WindingRow {
        m,
        eps,
        energy: f64::NAN,
        predicted,
        converged: false,
        constraint_active: false,
        iterations: 0,
        grad_norm: f64::NAN,
        rho_dev_over_eps: f64::NAN,
        theta_prime_rel_dev: f64::NAN,
        flux_fit: f64::NAN,
        flux_limit,
        flux_error: f64::NAN,
        first_integral_dev: f64::NAN,
        status: "ok".into(),
    };
    let grid = match make_grid(cfg.grid.n) {
        Ok(g) => g,
        Err(e) => {
            row.status = format!("failed: {e}");
            return row;
        }
    };
    let r = match minimize_winding_class(m, cfg.winding_scan.rho0, &params, grid, &cfg.solver) {
        Ok(r) => r,
        Err(e) => {
            row.status = format!("failed: {e}");
            return row;
        }
    };
    let p = r.polar.as_ref().expect("winding-class runs are polar");
    let rho = p.rho();
    let rate = 2.0 * PI * m as f64 + params.alpha;
    row.energy = r.total();
    row.converged = r.converged;
    row.constraint_active = r.constraint_active;
    row.iterations = r.iterations;
    row.grad_norm = r.final_grad_norm;
    row.rho_dev_over_eps = rho.iter().fold(0.0f64, |a, x| a.max((x - 1.0).abs())) / eps;
    row.theta_prime_rel_dev = p
        .theta_slopes()
        .iter()
        .fold(0.0f64, |a, t| a.max((t - rate).abs()))
        / rate.abs().max(f64::MIN_POSITIVE);
    row.flux_fit = fitted_flux_constant(p, &params);
    row.flux_error = (row.flux_fit - flux_limit).abs();
    if let Ok(pred) = predicted_theta_profile(rho, m, &params, grid.h()) {
        row.first_integral_dev = p
            .theta_slopes()
            .iter()
            .zip(&pred)
            .fold(0.0f64, |a, (t, q)| a.max((t - q).abs()));
    }
    if !r.converged {
        row.status = "not_converged".into();
    }
    row
}

/// Least-squares slope of `log err` against `log ε`.
fn observed_order(eps: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn winding_scan(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let ws = &cfg.winding_scan;
    let n = cfg.params.n as i64;
    let windings = ws.windings.clone().unwrap_or_else(|| (n - 2..=n + 2).collect());
    let ladder = descending(&ws.eps);
    let tasks: Vec<(i64, f64)> = windings
        .iter()
        .flat_map(|&m| ladder.iter().map(move |&e| (m, e)))
        .collect();
    let rows: Vec<WindingRow> = tasks.par_iter().map(|&(m, e)| winding_row(m, e, cfg)).collect();
    for r in rows.iter().filter(|r| r.status.starts_with("failed")) {
        out.failures.push(format!("M={} eps={}: {}", r.m, r.eps, r.status));
    }
    write_csv(&dir.join("winding_scan.csv"), &rows)?;
    out.artifacts.push("winding_scan.csv".into());

    let mut ext_rows = Vec::new();
    for &m in &windings {
        let mine: Vec<&WindingRow> = rows.iter().filter(|r| r.m == m).collect();
        let predicted = mine[0].predicted;
        let pairs: Vec<(f64, f64)> = mine.iter().map(|r| (r.eps, r.energy)).collect();
        let scale = if predicted.abs() > 1e-12 { predicted.abs() } else { 1.0 };
        let ext = extrapolate_eps(&pairs);
        let row = match &ext {
            Ok(x) => ExtrapolationRow {
                m,
                predicted,
                extrapolated: Some(x.limit),
                order: Some(x.order),
                rel_error: Some((x.limit - predicted).abs() / scale),
                status: "ok".into(),
            },
            Err(e) => ExtrapolationRow {
                m,
                predicted,
                extrapolated: None,
                order: None,
                rel_error: None,
                status: format!("{e}"),
            },
        };
        out.check(
            format!("energy_extrapolation_M{m}"),
            row.rel_error.is_some_and(|r| r < ws.energy_tol),
            match (row.extrapolated, row.order) {
                (Some(x), Some(p)) => format!(
                    "extrapolated {x:.6} (order {p:.3}) vs predicted {predicted:.6}, rel err {:.3e}, tol {}",
                    row.rel_error.unwrap_or(f64::NAN),
                    ws.energy_tol
                ),
                _ => format!("no fit ({}); energies {:?}", row.status, pairs),
            },
        );
        ext_rows.push(row);

        let small: Vec<&&WindingRow> = mine.iter().rev().take(2).collect();
        if small.len() == 2 {
            let inactive = small.iter().all(|r| !r.constraint_active && r.status == "ok");
            out.check(
                format!("constraint_inactive_M{m}"),
                inactive,
                format!("eps {} and {}", small[1].eps, small[0].eps),
            );
            let (a, b) = (small[1].rho_dev_over_eps, small[0].rho_dev_over_eps);
            let spread = (a - b).abs() / a.max(b);
            out.check(
                format!("modulus_rate_M{m}"),
                spread < 0.25,
                format!("|rho-1|/eps = {a:.4} then {b:.4}, relative change {spread:.3} (limit 0.25)"),
            );
        }
        let last = mine[mine.len() - 1];
        out.check(
            format!("theta_prime_M{m}"),
            last.theta_prime_rel_dev < 0.05,
            format!("max relative deviation {:.4} at eps {}", last.theta_prime_rel_dev, last.eps),
        );
        let errs: Vec<f64> = mine.iter().map(|r| r.flux_error).collect();
        let eps: Vec<f64> = mine.iter().map(|r| r.eps).collect();
        let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
        let order = observed_order(&eps, &errs);
        out.check(
            format!("flux_constant_M{m}"),
            decreasing && order >= 0.4,
            format!("errors {:?}, observed order {order:.3}", errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()),
        );
    }
    write_csv(&dir.join("extrapolated.csv"), &ext_rows)?;
    out.artifacts.push("extrapolated.csv".into());
    Ok(out)
}

// ----------------------------------------------------------- phase diagram

/// Agreement over cells farther than `min_distance` from a class boundary.
fn interior_agreement(cells: &[PhaseCell], min_distance: f64) -> (usize, usize) {
    let interior: Vec<&PhaseCell> = cells.iter().filter(|c| c.boundary_distance > min_distance).collect();
    (interior.iter().filter(|c| c.agrees()).count(), interior.len())
}

fn agreement_check(out: &mut RunOutput, name: &str, cells: &[PhaseCell], min_distance: f64, need: f64) {
    let (agree, total) = interior_agreement(cells, min_distance);
    let frac = if total > 0 { agree as f64 / total as f64 } else { 0.0 };
    let misses: Vec<String> = cells
        .iter()
        .filter(|c| c.boundary_distance > min_distance && !c.agrees())
        .take(10)
        .map(|c| format!("(L={:.3}, a={:.3}: {} vs {})", c.l, c.alpha, c.predicted, c.observed))
        .collect();
    out.check(
        name,
        total > 0 && frac >= need,
        format!("{agree}/{total} interior cells agree ({:.1}%, need {:.0}%) {}", 100.0 * frac, 100.0 * need, misses.join(" ")),
    );
}

fn recovery_bound_check(out: &mut RunOutput, cells: &[PhaseCell]) {
    let bad: Vec<String> = cells
        .iter()
        .filter(|c| matches!(c.recovery_energy, Some(r) if r < c.energy - 1e-9))
        .map(|c| format!("(L={:.3}, a={:.3})", c.l, c.alpha))
        .collect();
    let counted = cells.iter().filter(|c| c.recovery_energy.is_some()).count();
    out.check(
        "recovery_upper_bound",
        bad.is_empty() && counted > 0,
        format!("{counted} cells compared, {} below the computed minimum {}", bad.len(), bad.join(" ")),
    );
}

pub fn phase_diagram(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let pd = &cfg.phase_diagram;
    let template = cfg.params.model()?;
    let grid = make_grid(cfg.grid.n)?;
    let (ls, alphas) = (pd.l.values(), pd.alpha.values());
    let tasks: Vec<(f64, f64)> = ls.iter().flat_map(|&l| alphas.iter().map(move |&a| (l, a))).collect();
    let cells: Vec<PhaseCell> = tasks
        .par_iter()
        .map(|&(l, a)| phase_diagram_cell(l, a, &template, grid, &cfg.solver))
        .collect();
    for c in cells.iter().filter(|c| c.status.starts_with("failed") || c.status.starts_with("invalid")) {
        out.failures.push(format!("L={} alpha={}: {}", c.l, c.alpha, c.status));
    }
    write_csv(&dir.join("phase_diagram.csv"), &cells)?;
    out.artifacts.push("phase_diagram.csv".into());
    agreement_check(&mut out, "classification_agreement", &cells, pd.interior_distance, pd.agreement);
    recovery_bound_check(&mut out, &cells);

    if let Some(l_line) = pd.line_l {
        let line: Vec<PhaseCell> = alphas
            .par_iter()
            .map(|&a| phase_diagram_cell(l_line, a, &template, grid, &cfg.solver))
            .collect();
        write_csv(&dir.join("alpha_line.csv"), &line)?;
        out.artifacts.push("alpha_line.csv".into());
        let a_star = (2.0 * JUMP_COST / l_line).sqrt();
        let step = if alphas.len() > 1 { alphas[1] - alphas[0] } else { 0.0 };
        let flip = line.iter().position(|c| c.observed != "NoJumpAtN");
        let (passed, detail) = match flip {
            Some(k) if k > 0 && line[k].observed == "OneJumpFamily" => {
                let (lo, hi) = (line[k - 1].alpha, line[k].alpha);
                (
                    lo - 0.05 <= a_star && a_star <= hi + 0.05 && hi - lo <= step + 1e-12,
                    format!("flip between alpha {lo:.4} and {hi:.4}; critical alpha {a_star:.4}"),
                )
            }
            Some(k) => (false, format!("first non-NoJumpAtN cell at alpha {:.4} is {}", line[k].alpha, line[k].observed)),
            None => (false, "no flip observed along the line".into()),
        };
        out.check("critical_alpha_bracket", passed, detail);
    }
    Ok(out)
}

// ----------------------------------------------------------------- barrier

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierRow {
    pub eps: f64,
    pub images: usize,
    pub endpoint_a_energy: f64,
    pub endpoint_b_energy: f64,
    pub initial_barrier: f64,
    pub barrier: f64,
    pub argmax: usize,
    pub near_min_modulus: f64,
    pub saddle_grad_norm: f64,
    pub sweeps: usize,
    pub stop_reason: String,
    pub top_max_rise: f64,
    pub endpoints_fixed: bool,
    /// Newton-refined critical point near the top image (diagnostic only).
    pub refined_energy: Option<f64>,
    pub refined_morse_index: Option<usize>,
}

fn barrier_run(cfg: &ExperimentConfig, eps: f64, images: usize, dump: Option<&Path>) -> Result<BarrierRow> {
    let b = &cfg.barrier;
    let params = cfg.params.model()?.with_eps(eps);
    let grid = make_grid(cfg.grid.n)?;
    let ua = minimize_free(&uniform_twist_field(b.from_winding, &params, grid), &params, &cfg.solver)?;
    let ub = minimize_free(&uniform_twist_field(b.to_winding, &params, grid), &params, &cfg.solver)?;
    for (r, m) in [(&ua, b.from_winding), (&ub, b.to_winding)] {
        if r.winding != Some(m) {
            anyhow::bail!("endpoint in class {m} relaxed to winding {:?}", r.winding);
        }
    }
    let p0 = init_path(&ua.field, &ub.field, images, &params)?;
    let initial = barrier(&p0, &params).value;
    let p = relax_path(p0, &params, &b.string)?;
    let top = barrier(&p, &params);
    let k = p.len();
    let near = (top.index.saturating_sub(1)..=(top.index + 1).min(k - 1))
        .map(|i| p.images()[i].min_modulus())
        .fold(f64::INFINITY, f64::min);
    let tops: Vec<f64> = p
        .history()
        .iter()
        .map(|e| e.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let rise = tops.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let fixed = p.images()[0].values() == ua.field.values() && p.images()[k - 1].values() == ub.field.values();
    let refined = refine_critical_point(&top.field, &params, 1e-9, 100).ok().filter(|c| c.converged);
    if let Some(d) = dump {
        p.dump(d)?;
    }
    Ok(BarrierRow {
        eps,
        images,
        endpoint_a_energy: ua.total(),
        endpoint_b_energy: ub.total(),
        initial_barrier: initial,
        barrier: top.value,
        argmax: top.index,
        near_min_modulus: near,
        saddle_grad_norm: top.grad_max_norm,
        sweeps: p.sweeps(),
        stop_reason: format!("{:?}", p.stop_reason()).to_lowercase(),
        top_max_rise: if rise.is_finite() { rise } else { 0.0 },
        endpoints_fixed: fixed,
        refined_energy: refined.as_ref().map(|c| c.energy),
        refined_morse_index: refined.and_then(|c| c.morse_index),
    })
}

pub fn barrier_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let b = &cfg.barrier;
    let params = cfg.params.model()?;
    let ladder = descending(&b.eps);
    let mut rows = Vec::new();
    for &eps in &ladder {
        let name = format!("path_eps_{eps}");
        let dump = b.dump_paths.then(|| dir.join(&name));
        match barrier_run(cfg, eps, b.images, dump.as_deref()) {
            Ok(r) => {
                if b.dump_paths {
                    out.artifacts.push(name);
                }
                rows.push(r)
            }
            Err(e) => out.failures.push(format!("barrier eps={eps}: {e}")),
        }
    }
    let mut doubled = None;
    if b.check_doubling {
        if let Some(&eps) = ladder.last() {
            match barrier_run(cfg, eps, 2 * b.images - 1, None) {
                Ok(r) => doubled = Some(r),
                Err(e) => out.failures.push(format!("barrier doubling eps={eps}: {e}")),
            }
        }
    }
    let mut table = rows.clone();
    table.extend(doubled.clone());
    write_csv(&dir.join("barrier.csv"), &table)?;
    out.artifacts.push("barrier.csv".into());
    if rows.is_empty() {
        return Ok(out);
    }

    let predicted = predicted_saddle_energy(b.from_winding, &params);
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.barrier)).collect();
    match extrapolate_eps(&pairs) {
        Ok(x) => {
            let rel = (x.limit - predicted).abs() / predicted;
            out.check(
                "barrier_extrapolation",
                rel < b.tolerance,
                format!("extrapolated {:.5} (order {:.3}) vs {predicted:.5}, rel err {rel:.3e}", x.limit, x.order),
            );
        }
        Err(e) => out.check("barrier_extrapolation", false, format!("{e}; predicted {predicted:.5}")),
    }
    let last = &rows[rows.len() - 1];
    let lambda = 2.0 * PI * PI * params.l
        * (params.preferred_twist() - b.to_winding as f64 - params.alpha / (2.0 * PI)).powi(2)
        + JUMP_COST;
    out.check(
        "barrier_lower_bound",
        rows.iter().all(|r| r.barrier >= lambda - 0.1),
        format!("barriers {:?} vs bound {:.5} - 0.1", pairs.iter().map(|p| p.1).collect::<Vec<_>>(), lambda),
    );
    out.check(
        "zero_crossing_near_top",
        last.near_min_modulus < 0.2,
        format!("min |u| within one image of the top at eps {}: {:.4}", last.eps, last.near_min_modulus),
    );
    out.check(
        "relaxed_below_initial",
        rows.iter().all(|r| r.barrier <= r.initial_barrier + 1e-10),
        format!("{:?}", rows.iter().map(|r| (r.initial_barrier, r.barrier)).collect::<Vec<_>>()),
    );
    out.check(
        "top_energy_monotone",
        rows.iter().all(|r| r.top_max_rise <= b.string.slack),
        format!("largest rise {:.3e}", rows.iter().map(|r| r.top_max_rise).fold(f64::NEG_INFINITY, f64::max)),
    );
    out.check(
        "endpoints_fixed",
        rows.iter().all(|r| r.endpoints_fixed),
        "endpoint images compared bitwise",
    );
    if let Some(d) = doubled {
        let change = (d.barrier - last.barrier).abs() / last.barrier;
        out.check(
            "image_doubling",
            change < 0.01,
            format!("{} images {:.6}, {} images {:.6}, change {change:.3e}", last.images, last.barrier, d.images, d.barrier),
        );
    }
    Ok(out)
}

// --------------------------------------------------------------- twistbend

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwistCell {
    #[serde(rename = "A")]
    pub a: f64,
    pub eps: f64,
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
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LadderRow {
    #[serde(rename = "K")]
    pub k: u32,
    pub eps: f64,
    pub energy: f64,
    pub jumps: Option<usize>,
    pub winding: Option<i64>,
    pub h1_error: f64,
    pub probe_constant: f64,
    pub probe_sine: f64,
    pub status: String,
}

fn ladder_row(cfg: &ExperimentConfig, k: u32) -> LadderRow {
    let t = &cfg.twistbend;
    let [l, alpha, a] = t.ladder_point;
    let eps = eps_for_twist(t.beta, k, a);
    let mut row = LadderRow {
        k,
        eps,
        energy: f64::NAN,
        jumps: None,
        winding: None,
        h1_error: f64::NAN,
        probe_constant: f64::NAN,
        probe_sine: f64::NAN,
        status: "ok".into(),
    };
    let mut run = || -> Result<()> {
        let params = ModelParams::rescaled(eps, l, t.beta, alpha)?;
        let grid = make_grid(cfg.grid.n)?;
        let best = select_best(multistart_all(&params, grid, &Strategy::layer_set(&params), &cfg.solver))?;
        row.energy = best.report.total();
        row.jumps = best.jumps;
        row.winding = best.report.winding;
        let u = &best.report.field;
        row.probe_constant = weak_probe(u, |_| [1.0, 0.0]);
        row.probe_sine = weak_probe(u, |x| [(PI * x).sin(), 0.0]);
        let p = unwrap_phase(u, 1e-8)?;
        let v = microscale_v(p.theta(), eps, t.beta);
        row.h1_error = h1_error(&v, grid, 0.2, 0.8);
        if !best.report.converged {
            row.status = "not_converged".into();
        }
        Ok(())
    };
    if let Err(e) = run() {
        row.status = format!("failed: {e}");
    }
    row
}

pub fn twistbend(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let t = &cfg.twistbend;
    let grid = make_grid(cfg.grid.n)?;
    let (ls, alphas) = (t.l.values(), t.alpha.values());
    let tasks: Vec<(f64, f64, f64)> = t
        .fractions
        .iter()
        .flat_map(|&a| ls.iter().flat_map(|&l| alphas.iter().map(move |&al| (a, l, al))).collect::<Vec<_>>())
        .collect();
    let cells: Vec<TwistCell> = tasks
        .par_iter()
        .map(|&(a, l, al)| {
            let eps = eps_for_twist(t.beta, t.k, a);
            let invalid = |e: String| TwistCell {
                a,
                eps,
                l,
                alpha: al,
                predicted: classify_e0a(l, al, a).kind.to_string(),
                observed: "none".into(),
                energy: f64::NAN,
                jumps: None,
                winding: None,
                boundary_distance: classify_e0a(l, al, a).boundary_distance,
                status: e,
            };
            match ModelParams::rescaled(eps, l, t.beta, al) {
                Ok(params) => {
                    let c = phase_diagram_cell_with(l, al, &params, grid, &cfg.solver, Strategy::layer_set);
                    TwistCell {
                        a,
                        eps,
                        l,
                        alpha: al,
                        predicted: c.predicted,
                        observed: c.observed,
                        energy: c.energy,
                        jumps: c.jumps,
                        winding: c.winding,
                        boundary_distance: c.boundary_distance,
                        status: c.status,
                    }
                }
                Err(e) => invalid(format!("invalid: {e}")),
            }
        })
        .collect();
    for c in cells.iter().filter(|c| c.status.starts_with("failed") || c.status.starts_with("invalid")) {
        out.failures.push(format!("A={} L={} alpha={}: {}", c.a, c.l, c.alpha, c.status));
    }
    write_csv(&dir.join("twistbend.csv"), &cells)?;
    out.artifacts.push("twistbend.csv".into());
    let as_phase: Vec<PhaseCell> = cells
        .iter()
        .map(|c| PhaseCell {
            l: c.l,
            alpha: c.alpha,
            predicted: c.predicted.clone(),
            observed: c.observed.clone(),
            energy: c.energy,
            jumps: c.jumps,
            winding: c.winding,
            boundary_distance: c.boundary_distance,
            status: c.status.clone(),
            recovery_energy: None,
            jump_location: None,
        })
        .collect();
    agreement_check(&mut out, "fractional_classification", &as_phase, t.interior_distance, t.agreement);

    let mut ks = t.ladder.clone();
    ks.sort_unstable();
    ks.dedup();
    let ladder: Vec<LadderRow> = ks.par_iter().map(|&k| ladder_row(cfg, k)).collect();
    for r in ladder.iter().filter(|r| r.status.starts_with("failed")) {
        out.failures.push(format!("ladder K={}: {}", r.k, r.status));
    }
    write_csv(&dir.join("microscale.csv"), &ladder)?;
    out.artifacts.push("microscale.csv".into());
    let strictly_down = |f: &dyn Fn(&LadderRow) -> f64| ladder.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let show = |f: &dyn Fn(&LadderRow) -> f64| {
        ladder.iter().map(|r| format!("K={}: {:.4e}", r.k, f(r))).collect::<Vec<_>>().join(", ")
    };
    out.check("microscale_h1_decreasing", strictly_down(&|r| r.h1_error), show(&|r| r.h1_error));
    out.check("weak_probe_constant_decreasing", strictly_down(&|r| r.probe_constant), show(&|r| r.probe_constant));
    out.check("weak_probe_sine_decreasing", strictly_down(&|r| r.probe_sine), show(&|r| r.probe_sine));
    Ok(out)
}

// ---------------------------------------------------------- gamma recovery

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub eps: f64,
    pub method: String,
    pub n: usize,
    pub energy: Option<f64>,
    pub limit_energy: f64,
    pub excess: Option<f64>,
    pub layer_cost: f64,
    pub jumps_found: Option<usize>,
    pub location_error: Option<f64>,
    pub location_bound: f64,
    pub status: String,
}

fn recovery_row(cfg: &ExperimentConfig, eps: f64, resolved: bool) -> Result<RecoveryRow> {
    let g = &cfg.gamma_recovery;
    let params = cfg.params.model()?.with_eps(eps);
    let n = if resolved {
        (4.0 / (eps * eps) * 1.25).ceil() as usize + 1
    } else {
        (2.0 / eps).ceil() as usize + 1
    };
    let grid = make_grid(n)?;
    let twist = params.preferred_twist();
    let j = JumpMap::one_jump(&grid, g.jump_at, params.target_rate(), params.alpha, twist)?;
    let limit_energy = energy_gamma(&j, params.l, params.target_rate())?;
    let profile = RecoveryProfile::new(&j, eps)?;
    let interior = profile
        .transitions()
        .iter()
        .position(|t| t.boundary_phase.is_none())
        .context("jump map has no interior jump")?;
    let u = if resolved {
        build_recovery_sequence(&j, eps, grid)?
    } else {
        profile.sample(grid)?
    };
    let energy = resolved.then(|| energy_eps(&u, &params).total);
    let back = extract_jump_map(&u, DEFAULT_Q, &params);
    let (jumps_found, location_error) = match &back {
        Ok(b) => (
            Some(b.jump_count()),
            b.interior_jumps().first().map(|x| (x - g.jump_at).abs()),
        ),
        Err(_) => (None, None),
    };
    Ok(RecoveryRow {
        eps,
        method: if resolved { "resolved" } else { "profile" }.into(),
        n,
        energy,
        limit_energy,
        excess: energy.map(|e| e - limit_energy),
        layer_cost: profile.layer_cost(interior),
        jumps_found,
        location_error,
        location_bound: 2.0 * eps.sqrt() + eps * eps,
        status: back.err().map_or_else(|| "ok".to_string(), |e| format!("lift failed: {e}")),
    })
}

pub fn gamma_recovery(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let g = &cfg.gamma_recovery;
    let mut tasks: Vec<(f64, bool)> = descending(&g.eps).into_iter().map(|e| (e, true)).collect();
    tasks.push((g.layer_eps, false));
    let results: Vec<Result<RecoveryRow>> = tasks.par_iter().map(|&(e, r)| recovery_row(cfg, e, r)).collect();
    let mut rows = Vec::new();
    for (r, (e, _)) in results.into_iter().zip(&tasks) {
        match r {
            Ok(r) => rows.push(r),
            Err(err) => out.failures.push(format!("recovery eps={e}: {err}")),
        }
    }
    write_csv(&dir.join("recovery.csv"), &rows)?;
    out.artifacts.push("recovery.csv".into());

    let resolved: Vec<&RecoveryRow> = rows.iter().filter(|r| r.method == "resolved").collect();
    let excess: Vec<f64> = resolved.iter().filter_map(|r| r.excess).collect();
    out.check(
        "recovery_energy_converges",
        excess.len() >= 2 && excess.iter().all(|&e| e > 0.0) && excess.windows(2).all(|w| w[1] < w[0]),
        format!(
            "E_eps - E_0 = {}",
            resolved
                .iter()
                .map(|r| format!("{:.4e} (eps {})", r.excess.unwrap_or(f64::NAN), r.eps))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
    if let Some(r) = rows.iter().find(|r| r.method == "profile") {
        let rel = (r.layer_cost - JUMP_COST).abs() / JUMP_COST;
        out.check(
            "layer_cost",
            rel < g.layer_tol,
            format!("layer cost {:.6} vs {:.6} at eps {}, rel err {rel:.3e}", r.layer_cost, JUMP_COST, r.eps),
        );
    }
    let trip_ok = |r: &RecoveryRow| {
        r.jumps_found == Some(1) && r.location_error.is_some_and(|d| d <= r.location_bound)
    };
    out.check(
        "jump_round_trip",
        !rows.is_empty() && rows.iter().all(trip_ok),
        rows.iter()
            .map(|r| format!("eps {}: {:?} jumps, offset {:?}", r.eps, r.jumps_found, r.location_error))
            .collect::<Vec<_>>()
            .join("; "),
    );
    Ok(out)
}
