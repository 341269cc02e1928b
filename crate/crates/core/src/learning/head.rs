use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::error::{Error, Result};

/// Floor applied to the gold probability before taking its log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Affine layer followed by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    num_classes: usize,
    input_dim: usize,
    /// Row-major `num_classes x input_dim`.
    weight: Vec<f64>,
    bias: Vec<f64>,
    dropout_rate: f64,
}

impl ClassifierHead {
    pub fn zeros(num_classes: usize, input_dim: usize, dropout_rate: f64) -> Result<Self> {
        Self::from_parts(
            num_classes,
            input_dim,
            vec![0.0; num_classes * input_dim],
            vec![0.0; num_classes],
            dropout_rate,
        )
    }

    pub fn from_parts(
        num_classes: usize,
        input_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        dropout_rate: f64,
    ) -> Result<Self> {
        if num_classes < 2 || input_dim == 0 {
            return Err(Error::Contract(format!(
                "head needs >= 2 classes and a positive input dim, got {num_classes}x{input_dim}"
            )));
        }
        if weight.len() != num_classes * input_dim || bias.len() != num_classes {
            return Err(Error::Contract(format!(
                "head parameters have shapes {}/{} for a {num_classes}x{input_dim} head",
                weight.len(),
                bias.len()
            )));
        }
        if !weight.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::Contract("head parameters must be finite".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Contract(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        Ok(ClassifierHead {
            num_classes,
            input_dim,
            weight,
            bias,
            dropout_rate,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weight, &mut self.bias)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::Contract(format!(
                "input of length {} for a head expecting {}",
                input.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self
            .weight
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// Class probabilities (inference, no dropout).
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(input)?))
    }
}

/// Probability distribution over classes for `input`.
pub fn head_forward(head: &ClassifierHead, input: &Embedding) -> Result<Vec<f64>> {
    head.forward(input.as_slice())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-class_weights[gold] * ln(max(probs[gold], LOG_FLOOR))`.
pub fn weighted_cross_entropy(probs: &[f64], gold: usize, class_weights: &[f64]) -> Result<f64> {
    if gold >= probs.len() || class_weights.len() != probs.len() {
        return Err(Error::Contract(format!(
            "gold class {gold} with {} probabilities and {} weights",
            probs.len(),
            class_weights.len()
        )));
    }
    let p = probs[gold];
    let p = if p.is_nan() { p } else { p.max(LOG_FLOOR) };
    Ok(-class_weights[gold] * p.ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub loss: f64,
    /// Row-major, same layout as the head weight.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

/// Analytic gradients of the weighted cross-entropy of `head` at `input`.
pub fn head_gradients(
    head: &ClassifierHead,
    input: &[f64],
    gold: usize,
    class_weights: &[f64],
) -> Result<HeadGradients> {
    let probs = softmax(&head.logits(input)?);
    let loss = weighted_cross_entropy(&probs, gold, class_weights)?;
    let w = class_weights[gold];
    let dlogits: Vec<f64> = if probs[gold] < LOG_FLOOR {
        // Flat region of the clamped log.
        vec![0.0; probs.len()]
    } else {
        probs
            .iter()
            .enumerate()
            .map(|(k, p)| w * (p - if k == gold { 1.0 } else { 0.0 }))
            .collect()
    };

    let dim = head.input_dim;
    let mut weight = vec![0.0; head.weight.len()];
    let mut grad_input = vec![0.0; dim];
    for (k, &dz) in dlogits.iter().enumerate() {
        let row = &head.weight[k * dim..(k + 1) * dim];
        let grad_row = &mut weight[k * dim..(k + 1) * dim];
        for j in 0..dim {
            grad_row[j] = dz * input[j];
            grad_input[j] += dz * row[j];
        }
    }
    Ok(HeadGradients {
        loss,
        weight,
        bias: dlogits,
        input: grad_input,
    })
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn zero_head_is_uniform() {
        let head = ClassifierHead::zeros(3, 4, 0.5).unwrap();
        let p = head.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_head_softmax() {
        let head = ClassifierHead::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 0.0).unwrap();
        let p = head.forward(&[2.0, 0.0]).unwrap();
        let e2 = 2f64.exp();
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let head = ClassifierHead::zeros(2, 3, 0.0).unwrap();
        assert!(matches!(head.forward(&[1.0]), Err(Error::Contract(_))));
        assert!(ClassifierHead::from_parts(2, 2, vec![0.0; 3], vec![0.0; 2], 0.0).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(weighted_cross_entropy(&[0.0, 1.0], 1, &[1.0, 1.0]).unwrap(), 0.0);
        let unweighted = weighted_cross_entropy(&[0.5, 0.5], 0, &[1.0, 1.0]).unwrap();
        assert!((unweighted - std::f64::consts::LN_2).abs() < 1e-15);
        let weighted = weighted_cross_entropy(&[0.5, 0.5], 0, &[0.1, 1.0]).unwrap();
        assert_eq!(weighted, 0.1 * unweighted);
        assert!((weighted - 0.06931).abs() < 1e-5);
    }

    #[test]
    fn zero_probability_is_floored() {
        let loss = weighted_cross_entropy(&[0.0, 1.0], 0, &[1.0, 1.0]).unwrap();
        assert!((loss - -(LOG_FLOOR.ln())).abs() < 1e-12);
    }

    #[test]
    fn stationary_at_one_hot() {
        // A huge margin saturates the softmax to exactly one-hot.
        let head = ClassifierHead::from_parts(2, 1, vec![1000.0, -1000.0], vec![0.0, 0.0], 0.0).unwrap();
        let g = head_gradients(&head, &[1.0], 0, &[1.0, 1.0]).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.weight.iter().chain(&g.bias).chain(&g.input).all(|&x| x == 0.0));
    }

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    proptest! {
        #[test]
        fn probabilities_normalized(
            weight in proptest::collection::vec(-5.0f64..5.0, 12),
            bias in proptest::collection::vec(-5.0f64..5.0, 3),
            input in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let head = ClassifierHead::from_parts(3, 4, weight, bias, 0.0).unwrap();
            let p = head.forward(&input).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn gradients_scale_with_class_weight(
            weight in proptest::collection::vec(-2.0f64..2.0, 6),
            input in proptest::collection::vec(-2.0f64..2.0, 3),
            c in 0.01f64..10.0,
        ) {
            let head = ClassifierHead::from_parts(2, 3, weight, vec![0.1, -0.1], 0.0).unwrap();
            let g1 = head_gradients(&head, &input, 1, &[1.0, 1.0]).unwrap();
            let gc = head_gradients(&head, &input, 1, &[1.0, c]).unwrap();
            prop_assert!((gc.loss - c * g1.loss).abs() <= 1e-12 * gc.loss.abs().max(1.0));
            for (a, b) in g1.weight.iter().chain(&g1.bias).chain(&g1.input)
                .zip(gc.weight.iter().chain(&gc.bias).chain(&gc.input)) {
                prop_assert!((b - c * a).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
