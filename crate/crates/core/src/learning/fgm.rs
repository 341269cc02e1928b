use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::error::{Error, Result};

/// Where the adversarial perturbation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FgmTarget {
    /// The frozen encoder output fed to the head.
    PooledOutput,
    /// Token embeddings inside a fine-tunable backend.
    TokenEmbeddings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FgmConfig {
    pub enabled: bool,
    pub epsilon: f64,
}

impl Default for FgmConfig {
    fn default() -> Self {
        FgmConfig {
            enabled: false,
            epsilon: 1.0,
        }
    }
}

impl FgmConfig {
    pub fn on(epsilon: f64) -> Self {
        FgmConfig {
            enabled: true,
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("FGM epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Adds `epsilon * g / ||g||` to `values` in place and returns the
/// perturbation norm (0 when `g` is zero).
pub(crate) fn perturb_in_place(values: &mut [f64], grad: &[f64], epsilon: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return 0.0;
    }
    let scale = epsilon / norm;
    for (v, g) in values.iter_mut().zip(grad) {
        *v += scale * g;
    }
    epsilon
}

/// Fast-gradient-method perturbation of `input` along `input_grad`.
pub fn fgm_perturb(input: &Embedding, input_grad: &[f64], epsilon: f64) -> Result<Embedding> {
    if input.len() != input_grad.len() {
        return Err(Error::Contract(format!(
            "gradient of length {} for an input of length {}",
            input_grad.len(),
            input.len()
        )));
    }
    let mut out = input.clone();
    perturb_in_place(out.as_mut_slice(), input_grad, epsilon);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn three_four_five() {
        let out = fgm_perturb(&Embedding::zeros(2), &[3.0, 4.0], 1.0).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((out.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_input() {
        let input = Embedding::new(vec![0.3, -0.2, 1.0]).unwrap();
        assert_eq!(fgm_perturb(&input, &[0.0; 3], 1.0).unwrap(), input);
    }

    #[test]
    fn bad_epsilon() {
        assert!(FgmConfig::on(0.0).validate().is_err());
        assert!(FgmConfig::on(f64::NAN).validate().is_err());
        assert!(FgmConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn perturbation_has_norm_epsilon(
            input in proptest::collection::vec(-3.0f64..3.0, 1..20),
            seed in proptest::collection::vec(-3.0f64..3.0, 20),
            eps in 0.001f64..5.0,
        ) {
            let grad = &seed[..input.len()];
            prop_assume!(grad.iter().any(|&g| g.abs() > 1e-6));
            let x = Embedding::new(input).unwrap();
            let out = fgm_perturb(&x, grad, eps).unwrap();
            let delta: f64 = out.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!((delta - eps).abs() < 1e-9);
        }
    }
}
