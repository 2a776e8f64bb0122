//! Benchmark fixtures shared by the criterion targets.

use cholesteric::{make_grid, ComplexField, ModelParams};

/// A smooth field with a modulus dip at `x = 0.5`, away from any minimizer.
pub fn dipped_field(n: usize, params: &ModelParams) -> ComplexField {
    let grid = make_grid(n).expect("n >= 3");
    let rate = 2.0 * std::f64::consts::PI * params.preferred_twist() + params.alpha;
    ComplexField::from_fn(grid, params.alpha, |x| {
        let r = 1.0 - 0.6 * (-((x - 0.5) / 0.05).powi(2)).exp();
        let t = rate * x + 0.3 * (std::f64::consts::PI * x).sin();
        [r * t.cos(), r * t.sin()]
    })
    .expect("finite values")
}

pub fn params() -> ModelParams {
    ModelParams::new(0.01, 1.0, 1, 0.5).expect("valid parameters")
}
