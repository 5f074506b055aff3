use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentConfig, DistanceKind};
use crate::autodiff::AdamConfig;
use crate::enhancement::{DEFAULT_EPS, DEFAULT_XI};
use crate::error::{Error, Result};

/// Training variants: the full method, its two ablations and two baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Maie,
    Concat,
    FixedWeights,
    NoAlign,
    NoIe,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Maie, Method::Concat, Method::FixedWeights, Method::NoAlign, Method::NoIe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Maie => "maie",
            Method::Concat => "concat",
            Method::FixedWeights => "fixed_weights",
            Method::NoAlign => "no_align",
            Method::NoIe => "no_ie",
        }
    }

    /// Whether the representation loss update runs before the RL update.
    pub fn aligns(self) -> bool {
        matches!(self, Method::Maie | Method::NoIe)
    }

    /// Whether fusion is weighted by running-statistics importance.
    pub fn enhances(self) -> bool {
        matches!(self, Method::Maie | Method::NoAlign)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected one of maie, concat, fixed_weights, no_align, no_ie)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub seed: u64,
    /// Stop after this many completed episodes.
    pub episodes: usize,
    /// Optional cap on environment steps.
    pub max_steps: Option<u64>,
    pub gamma: f64,
    pub rollout_length: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub c_sim: f64,
    pub c_td: f64,
    pub distance: DistanceKind,
    pub xi: f64,
    pub eps: f64,
    /// Visual weight of the fixed-weights baseline; the other modalities
    /// share the remainder equally.
    pub fixed_visual_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Maie,
            seed: 0,
            episodes: 1000,
            max_steps: None,
            gamma: 0.99,
            rollout_length: 32,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 5.0,
            c_sim: 0.1,
            c_td: 0.01,
            distance: DistanceKind::Cosine,
            xi: DEFAULT_XI,
            eps: DEFAULT_EPS,
            fixed_visual_weight: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.rollout_length < 2 {
            return bad(format!("rollout_length must be at least 2, got {}", self.rollout_length));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        for (name, v) in [("entropy_coef", self.entropy_coef), ("value_coef", self.value_coef)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if !(self.max_grad_norm > 0.0) {
            return bad(format!("max_grad_norm must be positive, got {}", self.max_grad_norm));
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return bad(format!("xi must lie in (0, 1], got {}", self.xi));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(0.0..=1.0).contains(&self.fixed_visual_weight) {
            return bad(format!("fixed_visual_weight must lie in [0, 1], got {}", self.fixed_visual_weight));
        }
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        self.alignment().validate()
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig { c_sim: self.c_sim, c_td: self.c_td, distance: self.distance }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: 1e-8 }
    }

    /// Per-modality weights of the fixed-weights baseline; modality 0 is visual.
    pub fn fixed_weights(&self, modalities: usize) -> Vec<f64> {
        if modalities == 1 {
            return vec![1.0];
        }
        let rest = (1.0 - self.fixed_visual_weight) / (modalities - 1) as f64;
        std::iter::once(self.fixed_visual_weight).chain(std::iter::repeat_n(rest, modalities - 1)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_values_are_rejected() {
        let base = TrainConfig::default();
        for cfg in [
            TrainConfig { gamma: 0.0, ..base.clone() },
            TrainConfig { gamma: 1.5, ..base.clone() },
            TrainConfig { rollout_length: 1, ..base.clone() },
            TrainConfig { c_sim: -1.0, ..base.clone() },
            TrainConfig { xi: 0.0, ..base.clone() },
            TrainConfig { lr: f64::NAN, ..base.clone() },
            TrainConfig { fixed_visual_weight: 1.2, ..base.clone() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn method_flags() {
        assert!(Method::Maie.aligns() && Method::Maie.enhances());
        assert!(!Method::Concat.aligns() && !Method::Concat.enhances());
        assert!(Method::NoIe.aligns() && !Method::NoIe.enhances());
        assert!(!Method::NoAlign.aligns() && Method::NoAlign.enhances());
        assert!(!Method::FixedWeights.aligns() && !Method::FixedWeights.enhances());
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("attention".parse::<Method>().is_err());
    }

    #[test]
    fn fixed_weights_split_remainder() {
        let cfg = TrainConfig { fixed_visual_weight: 0.9, ..Default::default() };
        let w = cfg.fixed_weights(2);
        assert_eq!(w[0], 0.9);
        assert!((w[1] - 0.1).abs() < 1e-15);
        let w = cfg.fixed_weights(3);
        assert!((w[1] - 0.05).abs() < 1e-15 && (w[2] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let cfg = TrainConfig { method: Method::NoIe, max_steps: Some(500), ..Default::default() };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), cfg);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"method":"bogus"}"#).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"gama":0.9}"#).is_err());
    }
}
