use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance to the nearest integer below which `ε^{-β}` is treated as that integer.
pub const TWIST_SNAP: f64 = 1e-12;

/// Preferred twist: a fixed integer count `N`, or the unbounded regime `N_ε = ε^{-β}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Twist {
    Integer { n: u32 },
    Rescaled { beta: f64 },
}

/// Full parameter set of the relaxed energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub eps: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub twist: Twist,
    pub alpha: f64,
}

impl ModelParams {
    pub fn new(eps: f64, l: f64, n: u32, alpha: f64) -> Result<Self> {
        let p = Self {
            eps,
            l,
            twist: Twist::Integer { n },
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn rescaled(eps: f64, l: f64, beta: f64, alpha: f64) -> Result<Self> {
        let p = Self {
            eps,
            l,
            twist: Twist::Rescaled { beta },
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::InvalidParameter(format!("L must be positive, got {}", self.l)));
        }
        if !(0.0..2.0 * PI).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 2π), got {}",
                self.alpha
            )));
        }
        if let Twist::Rescaled { beta } = self.twist {
            if !(beta > 0.0 && beta < 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "beta must lie in (0, 1/2), got {beta}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_l(mut self, l: f64) -> Self {
        self.l = l;
        self
    }

    /// Integer twist count, if in the fixed-twist regime.
    pub fn n(&self) -> Option<u32> {
        match self.twist {
            Twist::Integer { n } => Some(n),
            Twist::Rescaled { .. } => None,
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self.twist {
            Twist::Integer { .. } => None,
            Twist::Rescaled { beta } => Some(beta),
        }
    }

    /// `N` or `ε^{-β}`, snapped to an integer when within [`TWIST_SNAP`] of one.
    pub fn preferred_twist(&self) -> f64 {
        match self.twist {
            Twist::Integer { n } => n as f64,
            Twist::Rescaled { beta } => snap(self.eps.powf(-beta)),
        }
    }

    /// Target value of the twist density, `2π N` or `2π ε^{-β}`.
    pub fn target_rate(&self) -> f64 {
        2.0 * PI * self.preferred_twist()
    }

    /// `N`, or `⌊ε^{-β}⌋` in the rescaled regime.
    pub fn floor_twist(&self) -> i64 {
        self.preferred_twist().floor() as i64
    }

    /// Fractional part `A` of `ε^{-β}`; zero in the integer regime.
    pub fn fractional_twist(&self) -> f64 {
        let t = self.preferred_twist();
        t - t.floor()
    }
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < TWIST_SNAP {
        r
    } else {
        x
    }
}

/// The `ε` for which `ε^{-β} = k + a` exactly (up to rounding), used to
/// select a prescribed fractional twist.
pub fn eps_for_twist(beta: f64, k: u32, a: f64) -> f64 {
    (k as f64 + a).powf(-1.0 / beta)
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}
