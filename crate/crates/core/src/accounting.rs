//! Model-size conventions and compute/size/token conversions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::ModelArch;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AccountingError {
    #[error("head-free model size is {0} for {1:?}; architecture is degenerate")]
    DegenerateArch(f64, ModelArch),
    #[error("compute budget must be positive and finite, got {0}")]
    InvalidBudget(f64),
    #[error("unknown size scheme {0:?} (expected linear, effective or kaplan)")]
    UnknownScheme(String),
}

/// How "model size" is counted when converting compute to tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeScheme {
    /// Parameters in every linear layer, including the output head.
    #[default]
    Linear,
    /// Linear size plus the attention-operation equivalent `n * d * l`.
    Effective,
    /// Linear size minus the head (`d * v`).
    #[serde(rename = "kaplan")]
    KaplanNoHead,
}

impl SizeScheme {
    pub const ALL: [SizeScheme; 3] = [Self::Linear, Self::Effective, Self::KaplanNoHead];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Effective => "effective",
            Self::KaplanNoHead => "kaplan",
        }
    }
}

impl fmt::Display for SizeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SizeScheme {
    type Err = AccountingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "n" => Ok(Self::Linear),
            "effective" | "eff" | "n_eff" => Ok(Self::Effective),
            "kaplan" | "kaplan-no-head" | "n_kaplan" => Ok(Self::KaplanNoHead),
            _ => Err(AccountingError::UnknownScheme(s.to_string())),
        }
    }
}

/// A positive FLOP budget.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ComputeBudget(f64);

impl ComputeBudget {
    pub fn new(flops: f64) -> Result<Self, AccountingError> {
        if flops > 0.0 && flops.is_finite() {
            Ok(Self(flops))
        } else {
            Err(AccountingError::InvalidBudget(flops))
        }
    }

    pub fn flops(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ComputeBudget {
    type Error = AccountingError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ComputeBudget> for f64 {
    fn from(c: ComputeBudget) -> f64 {
        c.0
    }
}

/// SwiGLU feed-forward width: `256 * floor((255 + floor(8d/3)) / 256)`.
pub fn ffn_dim(width: u64) -> u64 {
    256 * ((255 + (8 * width) / 3) / 256)
}

/// Model size of `arch` under `scheme`.
pub fn model_size(arch: &ModelArch, scheme: SizeScheme) -> Result<f64, AccountingError> {
    let (l, d, v, n) = (arch.depth, arch.width, arch.vocab, arch.seq_len);
    let body = (3 * ffn_dim(d) + 4 * d) * d * l;
    let head = d * v;
    let size = match scheme {
        SizeScheme::Linear => (body + head) as f64,
        SizeScheme::Effective => (body + head + n * d * l) as f64,
        SizeScheme::KaplanNoHead => body as f64,
    };
    if size <= 0.0 {
        return Err(AccountingError::DegenerateArch(size, *arch));
    }
    Ok(size)
}

/// Training compute `6 N D`.
pub fn train_flops(params: f64, tokens: f64) -> f64 {
    6.0 * params * tokens
}

/// Tokens that spend `flops` on a model of `params` parameters: `C / (6N)`.
pub fn tokens_for_budget(params: f64, flops: f64) -> f64 {
    flops / (6.0 * params)
}

/// The 16 (depth, width) pairs of the reference model grid.
pub const CANONICAL_SHAPES: [(u64, u64); 16] = [
    (3, 96),
    (4, 128),
    (5, 160),
    (6, 224),
    (8, 288),
    (9, 320),
    (10, 384),
    (12, 480),
    (14, 576),
    (15, 640),
    (18, 704),
    (21, 832),
    (23, 1024),
    (26, 1120),
    (26, 1312),
    (30, 1504),
];

/// The reference model grid (5M to 901M parameters), four heads each.
pub fn canonical_model_grid() -> Vec<ModelArch> {
    CANONICAL_SHAPES
        .iter()
        .map(|&(depth, width)| ModelArch::new(depth, width, 4))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ffn_dim_examples() {
        assert_eq!(ffn_dim(96), 256);
        assert_eq!(ffn_dim(1504), 4096);
        assert_eq!(ffn_dim(256), 768);
    }

    #[test]
    fn smallest_model_sizes() {
        let arch = ModelArch::new(3, 96, 4);
        assert_eq!(model_size(&arch, SizeScheme::Linear).unwrap(), 5_173_248.0);
        assert_eq!(model_size(&arch, SizeScheme::Effective).unwrap(), 5_763_072.0);
        assert_eq!(model_size(&arch, SizeScheme::KaplanNoHead).unwrap(), 331_776.0);
    }

    #[test]
    fn largest_model_size() {
        let arch = ModelArch::new(30, 1504, 4);
        assert_eq!(model_size(&arch, SizeScheme::Linear).unwrap(), 901_726_208.0);
    }

    #[test]
    fn flops_and_tokens() {
        assert_eq!(train_flops(5.173248e6, 1e6), 3.1039488e13);
        assert_eq!(train_flops(123.0, 0.0), 0.0);
        assert_eq!(train_flops(1.0, 1.0), 6.0);
        let d = tokens_for_budget(5.173248e6, 1.25e16);
        assert!((d / 4.0272e8 - 1.0).abs() < 1e-4, "{d}");
        assert_eq!(tokens_for_budget(7.0, 42.0), 1.0);
    }

    #[test]
    fn grid_shape() {
        let grid = canonical_model_grid();
        assert_eq!(grid.len(), 16);
        assert_eq!((grid[0].depth, grid[0].width), (3, 96));
        for arch in &grid {
            let ratio = arch.width as f64 / arch.depth as f64;
            assert!((32.0..=64.0).contains(&ratio), "{arch:?}");
            assert!(arch.validate().is_ok());
        }
    }

    #[test]
    fn scheme_ordering_and_head_gap() {
        let mut last_gap = f64::INFINITY;
        for arch in canonical_model_grid() {
            let n = model_size(&arch, SizeScheme::Linear).unwrap();
            let eff = model_size(&arch, SizeScheme::Effective).unwrap();
            let kap = model_size(&arch, SizeScheme::KaplanNoHead).unwrap();
            assert!(eff > n && n > kap && kap > 0.0);
            let gap = (n - kap) / n;
            assert!(gap < last_gap);
            last_gap = gap;
        }
    }

    #[test]
    fn scheme_parsing() {
        for s in SizeScheme::ALL {
            assert_eq!(s.as_str().parse::<SizeScheme>().unwrap(), s);
        }
        assert!("bogus".parse::<SizeScheme>().is_err());
    }

    #[test]
    fn budget_must_be_positive() {
        assert!(ComputeBudget::new(0.0).is_err());
        assert!(ComputeBudget::new(f64::NAN).is_err());
        assert_eq!(ComputeBudget::new(1e16).unwrap().flops(), 1e16);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokens_invert_flops(n in 1e3f64..1e12, c in 1e10f64..1e25) {
                let back = train_flops(n, tokens_for_budget(n, c));
                prop_assert!(((back - c) / c).abs() < 1e-12);
            }

            #[test]
            fn flops_scale_linearly(n in 1.0f64..1e10, d in 0.0f64..1e12, a in 0.1f64..100.0) {
                let lhs = train_flops(a * n, d);
                let rhs = a * train_flops(n, d);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            }
        }
    }
}
