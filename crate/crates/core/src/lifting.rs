//! Phase lifting, winding numbers, modulus dips and jump-map extraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, PolarField};
use crate::jump::{JumpMap, PhasePiece};
use crate::params::ModelParams;

/// Largest phase increment per grid step accepted by the lifting.
pub const ALIASING_GUARD: f64 = PI - 0.1;

/// Dip-depth exponent used for jump extraction (threshold `1/16`).
pub const DEFAULT_Q: u32 = 4;

/// Dip-depth exponent for counting jumps of computed minimizers (threshold
/// `1/4`). At moderate ε a minimizer's dip bottoms out near `0.1`, short of
/// the [`DEFAULT_Q`] threshold.
pub const CLASSIFY_Q: u32 = 2;

/// Signed angle from `a` to `b`.
#[inline]
fn step_angle(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1])
}

/// Continuous phase along `values`, starting in `[0, 2π)`; `offset` is the
/// index of `values[0]` in the full field, for error reporting.
fn lift(values: &[[f64; 2]], offset: usize) -> Result<Vec<f64>> {
    let mut theta = Vec::with_capacity(values.len());
    theta.push(values[0][1].atan2(values[0][0]).rem_euclid(2.0 * PI));
    for (k, w) in values.windows(2).enumerate() {
        let d = step_angle(w[0], w[1]);
        if d.abs() >= ALIASING_GUARD {
            return Err(Error::Aliasing {
                node: offset + k,
                increment: d,
            });
        }
        theta.push(theta[k] + d);
    }
    Ok(theta)
}

/// Lifts `u = ρ e^{iθ}` with `θ_0 ∈ [0, 2π)`.
pub fn unwrap_phase(u: &ComplexField, min_modulus: f64) -> Result<PolarField> {
    let rho = u.moduli();
    if let Some((node, &modulus)) = rho.iter().enumerate().find(|(_, r)| **r < min_modulus) {
        return Err(Error::VanishingModulus {
            node,
            modulus,
            threshold: min_modulus,
        });
    }
    let theta = lift(u.values(), 0)?;
    PolarField::new(*u.grid(), rho, theta, u.alpha())
}

/// Winding class `M` from the lifted phase of `e^{-iαx} u`.
pub fn winding_number(u: &ComplexField) -> Result<i64> {
    let alpha = u.alpha();
    let g = u.grid();
    let twisted: Vec<[f64; 2]> = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (s, c) = (-alpha * g.x(i)).sin_cos();
            [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
        })
        .collect();
    if let Some(i) = twisted.iter().position(|v| v[0] == 0.0 && v[1] == 0.0) {
        return Err(Error::UndefinedWinding(format!("modulus vanishes at node {i}")));
    }
    let theta = lift(&twisted, 0)?;
    Ok(((theta[theta.len() - 1] - theta[0]) / (2.0 * PI)).round() as i64)
}

/// Maximal node ranges where `ρ ≤ 1 − 2^{-q}` that reach down to `ρ ≤ 2^{-q}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadIntervalReport {
    pub q: u32,
    /// Inclusive node index ranges, sorted and disjoint.
    pub intervals: Vec<(usize, usize)>,
    pub count: usize,
}

pub fn detect_bad_intervals(u: &ComplexField, q: u32) -> BadIntervalReport {
    detect_in_moduli(&u.moduli(), q)
}

pub(crate) fn detect_in_moduli(rho: &[f64], q: u32) -> BadIntervalReport {
    let high = 1.0 - 0.5f64.powi(q as i32);
    let low = 0.5f64.powi(q as i32);
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < rho.len() {
        if rho[i] > high {
            i += 1;
            continue;
        }
        let start = i;
        let mut deep = false;
        while i < rho.len() && rho[i] <= high {
            deep |= rho[i] <= low;
            i += 1;
        }
        if deep {
            intervals.push((start, i - 1));
        }
    }
    let count = intervals.len();
    BadIntervalReport { q, intervals, count }
}

/// Collapses bad intervals to jump candidates at their midpoints and lifts
/// the phase on the good segments in between. Intervals touching an end node
/// collapse onto that end. The resulting map is normalized by
/// [`JumpMap::new`]: removable candidates are merged and endpoint jumps are
/// read from the traces.
pub fn extract_jump_map(u: &ComplexField, q: u32, params: &ModelParams) -> Result<JumpMap> {
    let g = u.grid();
    let n = g.n();
    let report = detect_bad_intervals(u, q);
    let mut jumps = Vec::with_capacity(report.count);
    let mut segments = Vec::with_capacity(report.count + 1);
    let mut seg_start = 0usize;
    for &(a, b) in &report.intervals {
        let x = if a == 0 {
            0.0
        } else if b == n - 1 {
            1.0
        } else {
            0.5 * (g.x(a) + g.x(b))
        };
        if a > seg_start {
            segments.push((seg_start, a - 1));
        }
        jumps.push(x);
        seg_start = b + 1;
    }
    if seg_start < n {
        segments.push((seg_start, n - 1));
    }
    let twist = match params.n() {
        Some(n) => n as f64,
        None => params.fractional_twist(),
    };
    let pieces = segments
        .iter()
        .map(|&(a, b)| {
            let theta = lift(&u.values()[a..=b], a)?;
            Ok(PhasePiece {
                x: (a..=b).map(|i| g.x(i)).collect(),
                theta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    JumpMap::new(jumps, pieces, u.alpha(), twist)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::field::{make_grid, to_cartesian, twist_field, uniform_twist_field};

    #[test]
    fn lifts_three_turns() {
        let g = make_grid(257).unwrap();
        let u = twist_field(6.0 * PI, 0.0, g);
        let p = unwrap_phase(&u, 0.5).unwrap();
        assert!((p.theta()[256] - 6.0 * PI).abs() < 1e-10);
        assert!(p.rho().iter().all(|r| (r - 1.0).abs() < 1e-14));
        assert_eq!(p.winding(), 3);
    }

    #[test]
    fn constant_field_lifts_to_zero() {
        let g = make_grid(10).unwrap();
        let u = ComplexField::from_fn(g, 0.0, |_| [1.0, 0.0]).unwrap();
        assert!(unwrap_phase(&u, 0.5).unwrap().theta().iter().all(|t| *t == 0.0));
    }

    #[test]
    fn eight_nodes_three_turns_still_lifts() {
        // Step 6π/7 ≈ 2.69 stays below the guard π − 0.1 ≈ 3.04.
        let g = make_grid(8).unwrap();
        let p = unwrap_phase(&twist_field(6.0 * PI, 0.0, g), 0.5).unwrap();
        assert!((p.theta()[7] - 6.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn half_turn_steps_alias() {
        let g = make_grid(7).unwrap();
        let u = twist_field(6.0 * PI, 0.0, g);
        assert!(matches!(unwrap_phase(&u, 0.5), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn small_modulus_rejected() {
        let g = make_grid(5).unwrap();
        let u = ComplexField::with_boundary(g, vec![[1.0, 0.0], [0.5, 0.0], [0.01, 0.0], [0.5, 0.0], [1.0, 0.0]], 0.0)
            .unwrap();
        assert!(matches!(
            unwrap_phase(&u, 0.1),
            Err(Error::VanishingModulus { node: 2, .. })
        ));
    }

    #[test]
    fn winding_examples() {
        let g = make_grid(128).unwrap();
        let p = ModelParams::new(0.1, 1.0, 1, 1.0).unwrap();
        assert_eq!(winding_number(&uniform_twist_field(2, &p, g)).unwrap(), 2);
        let p = ModelParams::new(0.1, 1.0, 1, 0.0).unwrap();
        assert_eq!(winding_number(&uniform_twist_field(0, &p, g)).unwrap(), 0);
    }

    #[test]
    fn winding_all_small_classes() {
        for &n in &[64, 100, 257] {
            let g = make_grid(n).unwrap();
            for alpha in [0.0, 2.5, 6.0] {
                let p = ModelParams::new(0.1, 1.0, 1, alpha).unwrap();
                for m in -5..=5 {
                    assert_eq!(winding_number(&uniform_twist_field(m, &p, g)).unwrap(), m);
                }
            }
        }
    }

    #[test]
    fn zero_node_has_no_winding() {
        let g = make_grid(5).unwrap();
        let u = ComplexField::with_boundary(g, vec![[1.0, 0.0], [0.5, 0.0], [0.0, 0.0], [0.5, 0.0], [1.0, 0.0]], 0.0)
            .unwrap();
        assert!(matches!(winding_number(&u), Err(Error::UndefinedWinding(_))));
    }

    fn dipped(n: usize, depth: f64, phase_step: f64) -> ComplexField {
        let g = make_grid(n).unwrap();
        ComplexField::from_fn(g, phase_step.rem_euclid(2.0 * PI), |x| {
            let r = 1.0 - depth * (-((x - 0.5) / 0.05).powi(2)).exp();
            let t = if x < 0.5 { 0.0 } else { phase_step };
            [r * t.cos(), r * t.sin()]
        })
        .unwrap()
    }

    #[test]
    fn shallow_dip_is_not_bad() {
        let u = dipped(201, 0.4, 0.0);
        assert_eq!(detect_bad_intervals(&u, 2).count, 0);
        let g = make_grid(33).unwrap();
        let u = ComplexField::from_fn(g, 0.0, |_| [1.0, 0.0]).unwrap();
        assert_eq!(detect_bad_intervals(&u, 4).count, 0);
    }

    #[test]
    fn deep_dip_with_phase_step_is_a_jump() {
        let u = dipped(401, 1.0, 2.0);
        let params = ModelParams::new(0.01, 1.0, 0, 2.0).unwrap();
        let j = extract_jump_map(&u, DEFAULT_Q, &params).unwrap();
        assert_eq!(j.jumps().len(), 1);
        assert!((j.jumps()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deep_dip_without_phase_change_is_removable() {
        let u = dipped(401, 1.0, 0.0);
        let params = ModelParams::new(0.01, 1.0, 0, 0.0).unwrap();
        let j = extract_jump_map(&u, DEFAULT_Q, &params).unwrap();
        assert!(j.jumps().is_empty());
    }

    #[test]
    fn uniform_twist_has_no_jumps() {
        let g = make_grid(300).unwrap();
        let p = ModelParams::new(0.1, 1.0, 1, 2.2).unwrap();
        for m in -1..=2 {
            let j = extract_jump_map(&uniform_twist_field(m, &p, g), 4, &p).unwrap();
            assert!(j.jumps().is_empty());
        }
    }

    #[test]
    fn boundary_dip_collapses_to_endpoint() {
        let g = make_grid(201).unwrap();
        let values = g
            .nodes()
            .map(|x| {
                let r = if x < 0.05 { 0.0 } else { (10.0 * (x - 0.05)).min(1.0) };
                let t = 0.7 + x * (1.0 - 0.7);
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        let u = ComplexField::new(g, values, 1.0).unwrap();
        let params = ModelParams::new(0.01, 1.0, 0, 1.0).unwrap();
        let j = extract_jump_map(&u, 4, &params).unwrap();
        assert_eq!(j.jumps(), &[0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn deeper_thresholds_nest(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 300;
            let centers: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.01..0.08), rng.gen_range(0.5..1.0)))
                .collect();
            let rho: Vec<f64> = (0..n).map(|i| {
                let x = i as f64 / (n - 1) as f64;
                centers.iter().fold(1.0f64, |r, &(c, w, d)| r.min(1.0 - d * (-((x - c) / w).powi(2)).exp()))
                    + rng.gen_range(-0.01..0.01)
            }).collect();
            for q1 in 2..8u32 {
                for q2 in q1 + 1..=8 {
                    let b1 = detect_in_moduli(&rho, q1);
                    let b2 = detect_in_moduli(&rho, q2);
                    prop_assert!(b2.count <= b1.count);
                    for &(a, b) in &b2.intervals {
                        prop_assert!(b1.intervals.iter().any(|&(c, d)| a <= c && d <= b));
                    }
                }
            }
        }

        #[test]
        fn lift_round_trip(seed in any::<u64>(), m in -4i64..=4, alpha in 0.0..6.28f64) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = make_grid(257).unwrap();
            let rate = 2.0 * PI * m as f64 + alpha;
            let a1: f64 = rng.gen_range(-0.3..0.3);
            let a2: f64 = rng.gen_range(-1.0..1.0);
            let rho = g.nodes().map(|x| 1.0 + a1 * (PI * x).sin()).collect();
            let theta = g.nodes().map(|x| rate * x + a2 * (2.0 * PI * x).sin()).collect();
            let p = PolarField::with_boundary(g, rho, theta, m, alpha).unwrap();
            let u = to_cartesian(&p);
            let back = to_cartesian(&unwrap_phase(&u, 0.1).unwrap());
            for (a, b) in u.values().iter().zip(back.values()) {
                prop_assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
            prop_assert_eq!(winding_number(&u).unwrap(), m);
        }
    }
}
