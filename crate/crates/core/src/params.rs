use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoding of the negative-label margin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginRule {
    /// `y <= -2^cost_bits`, the mirror of the positive margin.
    #[default]
    Threshold,
    /// Sign set and bits `1..=slack_bits-cost_bits-1` clear, which means
    /// `y <= -2^(slack_bits-1) + 2^cost_bits - 1`.
    BitPattern,
}

/// Every width and budget used by the encoder.
///
/// `alpha` only matters for image discretization and is validated there.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub num_bits: u32,
    pub slack_bits: u32,
    pub regret_bits: u32,
    pub cost_bits: u32,
    #[serde(default)]
    pub margin: MarginRule,
    pub product_magnitude_bits: u32,
    pub alpha: u32,
    pub batch_size: usize,
    pub num_batches: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            num_bits: 4,
            slack_bits: 8,
            regret_bits: 0,
            cost_bits: 0,
            margin: MarginRule::Threshold,
            product_magnitude_bits: 7,
            alpha: 2,
            batch_size: 30,
            num_batches: 20,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let Hyperparams {
            num_bits: nb,
            slack_bits: sb,
            regret_bits: rb,
            cost_bits: cb,
            product_magnitude_bits: pmb,
            ..
        } = *self;
        let fail = |msg: String| Err(Error::Config(msg));
        if nb < 1 || nb >= sb {
            return fail(format!("need 1 <= num_bits < slack_bits, got {nb}, {sb}"));
        }
        if sb > 62 {
            return fail(format!("slack_bits {sb} exceeds the 62-bit interpreter limit"));
        }
        if rb > sb - nb {
            return fail(format!("regret_bits {rb} exceeds slack_bits - num_bits = {}", sb - nb));
        }
        if cb + 1 >= sb {
            return fail(format!("cost_bits {cb} must be < slack_bits - 1"));
        }
        if pmb < nb || pmb > 2 * nb - 1 || 2 * nb - 1 > sb || pmb >= sb {
            return fail(format!(
                "need num_bits <= product_magnitude_bits <= 2*num_bits-1 <= slack_bits and product_magnitude_bits < slack_bits, got {nb}, {pmb}, {sb}"
            ));
        }
        Ok(())
    }

    /// Checks `1 < alpha < num_bits`.
    pub fn validate_alpha(&self) -> Result<()> {
        if self.alpha <= 1 || self.alpha >= self.num_bits {
            return Err(Error::Config(format!(
                "need 1 < alpha < num_bits, got alpha={} num_bits={}",
                self.alpha, self.num_bits
            )));
        }
        Ok(())
    }

    /// Largest activation value, `2^(num_bits-1) - 1`.
    pub fn clip_max(&self) -> i64 {
        (1i64 << (self.num_bits - 1)) - 1
    }

    pub fn weight_range(&self) -> (i64, i64) {
        signed_range(self.num_bits)
    }

    pub fn slack_range(&self) -> (i64, i64) {
        signed_range(self.slack_bits)
    }
}

/// Inclusive two's-complement range of a `width`-bit signed integer.
pub fn signed_range(width: u32) -> (i64, i64) {
    let half = 1i64 << (width - 1);
    (-half, half - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Hyperparams::default().validate().unwrap();
        Hyperparams::default().validate_alpha().unwrap();
    }

    #[test]
    fn rejects_inconsistent_widths() {
        let base = Hyperparams::default();
        let bad = [
            Hyperparams { slack_bits: 4, ..base.clone() },
            Hyperparams { regret_bits: 5, ..base.clone() },
            Hyperparams { cost_bits: 7, ..base.clone() },
            Hyperparams { product_magnitude_bits: 8, ..base.clone() },
            Hyperparams { product_magnitude_bits: 3, ..base.clone() },
            Hyperparams { slack_bits: 6, product_magnitude_bits: 6, ..base.clone() },
        ];
        for hp in bad {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
        assert!(Hyperparams { alpha: 4, ..base.clone() }.validate_alpha().is_err());
        assert!(Hyperparams { alpha: 1, ..base }.validate_alpha().is_err());
    }

    #[test]
    fn ranges() {
        assert_eq!(signed_range(4), (-8, 7));
        assert_eq!(Hyperparams::default().slack_range(), (-128, 127));
        assert_eq!(Hyperparams::default().clip_max(), 7);
    }
}
