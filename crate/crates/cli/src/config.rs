//! Experiment configuration: JSON with per-field defaults plus dotted
//! `key=value` overrides.

use std::f64::consts::PI;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use cholesteric::minimize::SolverOptions;
use cholesteric::{ModelParams, StringOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Minimize,
    WindingScan,
    PhaseDiagram,
    Barrier,
    Twistbend,
    GammaRecovery,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Minimize => "minimize",
            ExperimentKind::WindingScan => "winding_scan",
            ExperimentKind::PhaseDiagram => "phase_diagram",
            ExperimentKind::Barrier => "barrier",
            ExperimentKind::Twistbend => "twistbend",
            ExperimentKind::GammaRecovery => "gamma_recovery",
        }
    }
}

/// Base model parameters; `beta` switches to the unbounded-twist regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub eps: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub n: u32,
    pub alpha: f64,
    pub beta: Option<f64>,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self {
            eps: 0.01,
            l: 1.0,
            n: 1,
            alpha: 0.5,
            beta: None,
        }
    }
}

impl ParamsConfig {
    pub fn model(&self) -> Result<ModelParams> {
        let p = match self.beta {
            Some(b) => ModelParams::rescaled(self.eps, self.l, b, self.alpha),
            None => ModelParams::new(self.eps, self.l, self.n, self.alpha),
        };
        p.map_err(|e| anyhow!("params: {e}"))
    }
}

/// `count` evenly spaced values from `min` to `max` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Range {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        (0..self.count)
            .map(|k| self.min + (self.max - self.min) * k as f64 / (self.count - 1) as f64)
            .collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.count == 0 {
            bail!("{name}: range must be nonempty");
        }
        if !(self.min.is_finite() && self.max.is_finite()) || self.max < self.min {
            bail!("{name}: need finite min <= max");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 401 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeConfig {
    /// Constrained run in this winding class; multistart when absent.
    pub winding: Option<i64>,
    pub rho0: f64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            winding: None,
            rho0: cholesteric::minimize::DEFAULT_RHO0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindingScanConfig {
    /// Defaults to `N−2 ..= N+2`.
    pub windings: Option<Vec<i64>>,
    pub eps: Vec<f64>,
    pub rho0: f64,
    /// Relative tolerance of the extrapolated energy.
    pub energy_tol: f64,
}

impl Default for WindingScanConfig {
    fn default() -> Self {
        Self {
            windings: None,
            eps: vec![0.04, 0.02, 0.01, 0.005],
            rho0: cholesteric::minimize::DEFAULT_RHO0,
            energy_tol: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseDiagramConfig {
    #[serde(rename = "L")]
    pub l: Range,
    pub alpha: Range,
    /// Extra α line at this `L` for locating the jump/no-jump flip.
    pub line_l: Option<f64>,
    pub interior_distance: f64,
    pub agreement: f64,
}

impl Default for PhaseDiagramConfig {
    fn default() -> Self {
        Self {
            l: Range::new(0.02, 2.0, 20),
            alpha: Range::new(0.1, 2.0 * PI - 0.1, 20),
            line_l: Some(1.0),
            interior_distance: 0.2,
            agreement: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierConfig {
    pub from_winding: i64,
    pub to_winding: i64,
    pub eps: Vec<f64>,
    pub images: usize,
    /// Rerun the smallest ε with twice the images.
    pub check_doubling: bool,
    pub tolerance: f64,
    pub string: StringOptions,
    pub dump_paths: bool,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            from_winding: 0,
            to_winding: 1,
            eps: vec![0.02, 0.01, 0.005],
            images: cholesteric::saddle::DEFAULT_IMAGES,
            check_doubling: true,
            tolerance: 0.05,
            string: StringOptions::default(),
            dump_paths: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwistbendConfig {
    pub beta: f64,
    /// Integer part `K` of `ε^{-β}` for the classification sweep.
    pub k: u32,
    pub fractions: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Range,
    pub alpha: Range,
    pub interior_distance: f64,
    pub agreement: f64,
    /// `K` ladder for the microscale and weak-convergence probes.
    pub ladder: Vec<u32>,
    /// `(L, α, A)` of the ladder runs.
    pub ladder_point: [f64; 3],
}

impl Default for TwistbendConfig {
    fn default() -> Self {
        Self {
            beta: 0.25,
            k: 12,
            fractions: vec![0.1, 0.5, 0.9],
            l: Range::new(0.05, 2.0, 5),
            alpha: Range::new(0.1, 2.0 * PI - 0.1, 5),
            interior_distance: 0.2,
            agreement: 0.9,
            ladder: vec![2, 4, 8],
            ladder_point: [1.0, 0.5, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaRecoveryConfig {
    /// Fully resolved ladder (`h < ε²/4`).
    pub eps: Vec<f64>,
    /// Quadrature-only ε for the layer cost.
    pub layer_eps: f64,
    pub jump_at: f64,
    pub layer_tol: f64,
}

impl Default for GammaRecoveryConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.02, 0.01],
            layer_eps: 1e-4,
            jump_at: 0.5,
            layer_tol: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub params: ParamsConfig,
    pub grid: GridConfig,
    pub solver: SolverOptions,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub minimize: MinimizeConfig,
    pub winding_scan: WindingScanConfig,
    pub phase_diagram: PhaseDiagramConfig,
    pub barrier: BarrierConfig,
    pub twistbend: TwistbendConfig,
    pub gamma_recovery: GammaRecoveryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Minimize,
            params: ParamsConfig::default(),
            grid: GridConfig::default(),
            solver: SolverOptions::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            minimize: MinimizeConfig::default(),
            winding_scan: WindingScanConfig::default(),
            phase_diagram: PhaseDiagramConfig::default(),
            barrier: BarrierConfig::default(),
            twistbend: TwistbendConfig::default(),
            gamma_recovery: GammaRecoveryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON text, applies `key=value` overrides, and validates.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        if !doc.is_object() {
            bail!("config must be a JSON object");
        }
        // Overrides land on the fully defaulted document, so `a.b=1` works
        // even when section `a` was omitted from the file.
        let base: Self = serde_json::from_value(doc).context("config does not match the schema")?;
        let mut doc = serde_json::to_value(&base)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).context("config does not match the schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.model()?;
        self.solver.validate().map_err(|e| anyhow!("solver: {e}"))?;
        if self.grid.n < 3 {
            bail!("grid.n must be at least 3");
        }
        let ladder = |name: &str, v: &[f64]| -> Result<()> {
            if v.is_empty() {
                bail!("{name}: ladder must be nonempty");
            }
            if v.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                bail!("{name}: every ε must lie in (0, 1)");
            }
            Ok(())
        };
        match self.kind {
            ExperimentKind::Minimize => {}
            ExperimentKind::WindingScan => {
                ladder("winding_scan.eps", &self.winding_scan.eps)?;
                if matches!(&self.winding_scan.windings, Some(w) if w.is_empty()) {
                    bail!("winding_scan.windings must be nonempty");
                }
            }
            ExperimentKind::PhaseDiagram => {
                self.phase_diagram.l.validate("phase_diagram.L")?;
                self.phase_diagram.alpha.validate("phase_diagram.alpha")?;
            }
            ExperimentKind::Barrier => {
                ladder("barrier.eps", &self.barrier.eps)?;
                if self.barrier.images < cholesteric::saddle::MIN_IMAGES {
                    bail!("barrier.images must be at least {}", cholesteric::saddle::MIN_IMAGES);
                }
                if self.barrier.from_winding == self.barrier.to_winding {
                    bail!("barrier endpoints need different windings");
                }
            }
            ExperimentKind::Twistbend => {
                let t = &self.twistbend;
                t.l.validate("twistbend.L")?;
                t.alpha.validate("twistbend.alpha")?;
                if t.fractions.is_empty() || t.fractions.iter().any(|a| !(0.0..1.0).contains(a)) {
                    bail!("twistbend.fractions must be nonempty and lie in [0, 1)");
                }
                if !(t.beta > 0.0 && t.beta < 1.0) {
                    bail!("twistbend.beta must lie in (0, 1)");
                }
                if t.ladder.len() < 2 || t.k == 0 || t.ladder.contains(&0) {
                    bail!("twistbend needs k >= 1 and a ladder of at least two positive K");
                }
            }
            ExperimentKind::GammaRecovery => {
                ladder("gamma_recovery.eps", &self.gamma_recovery.eps)?;
                let x = self.gamma_recovery.jump_at;
                if !(x > 0.0 && x < 1.0) {
                    bail!("gamma_recovery.jump_at must be interior");
                }
            }
        }
        Ok(())
    }
}

/// Sets `a.b.c=value`; the value is read as JSON when it parses, else as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not key=value"))?;
    if key.is_empty() {
        bail!("override `{assignment}` has an empty key");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_one_line() {
        let c = ExperimentConfig::from_json(r#"{"kind": "minimize"}"#, &[]).unwrap();
        assert_eq!(c.grid.n, 401);
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let c = ExperimentConfig::from_json(
            r#"{"kind": "phase_diagram"}"#,
            &["params.L=0.3".into(), "phase_diagram.alpha.count=4".into(), "grid.n=101".into()],
        )
        .unwrap();
        assert_eq!(c.params.l, 0.3);
        assert_eq!(c.phase_diagram.alpha.count, 4);
        assert_eq!(c.grid.n, 101);
        let c = ExperimentConfig::from_json("{}", &["kind=barrier".into()]).unwrap();
        assert_eq!(c.kind, ExperimentKind::Barrier);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(ExperimentConfig::from_json("[1]", &[]).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind": "nope"}"#, &[]).is_err());
        assert!(ExperimentConfig::from_json(r#"{"typo": 1}"#, &[]).is_err());
        assert!(ExperimentConfig::from_json("{}", &["params.eps=-1".into()]).is_err());
        assert!(ExperimentConfig::from_json("{}", &["grid".into()]).is_err());
        assert!(ExperimentConfig::from_json("{}", &["kind=phase_diagram".into(), "phase_diagram.L.count=0".into()]).is_err());
        assert!(ExperimentConfig::from_json("{}", &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn ranges_include_endpoints() {
        let v = Range::new(0.1, 0.5, 5).values();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0], 0.1);
        assert!((v[4] - 0.5).abs() < 1e-15);
        assert_eq!(Range::new(2.0, 2.0, 1).values(), vec![2.0]);
    }
}
