use alloc::vec::Vec;

use super::weights::ClassWeights;
use crate::autodiff::{Graph, Var};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Class-weighted, label-smoothed cross-entropy over `[B × 2]` logits.
///
/// Sample `i` targets `(1 − ε)` on its class and `ε` on the other; the loss is
/// the batch mean of `w_{y_i} · H(target_i, softmax(logits_i))`.
pub fn weighted_ce_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[u8],
    weights: &ClassWeights,
    smoothing: f64,
) -> Result<Var> {
    let shape = g.value(logits).shape().to_vec();
    if shape.len() != 2 || shape[1] != 2 || shape[0] != labels.len() {
        bail!(Shape, "loss expects [{} × 2] logits, got {:?}", labels.len(), shape);
    }
    if !(0.0..0.5).contains(&smoothing) {
        bail!(Contract, "label smoothing must lie in [0, 0.5), got {smoothing}");
    }
    let b = labels.len() as f64;
    let mut coeff = Vec::with_capacity(labels.len() * 2);
    for &y in labels {
        if y > 1 {
            bail!(Contract, "labels must be 0 or 1, got {y}");
        }
        let w = weights.weight(y);
        for class in 0..2u8 {
            let target = if class == y { 1.0 - smoothing } else { smoothing };
            coeff.push(-w * target / b);
        }
    }
    let c = g.constant(Tensor::new(&shape, coeff)?)?;
    let logp = g.log_softmax(logits)?;
    let terms = g.mul(logp, c)?;
    g.sum(terms)
}

/// Per-sample loss values (no reduction), for reporting.
pub fn per_sample_loss(logits: &Tensor, labels: &[u8], weights: &ClassWeights, smoothing: f64) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let (a, b) = (logits.get2(i, 0), logits.get2(i, 1));
            let m = a.max(b);
            let lse = m + libm::log(libm::exp(a - m) + libm::exp(b - m));
            let lp = [a - lse, b - lse];
            let (t, o) = (y as usize, 1 - y as usize);
            -weights.weight(y) * ((1.0 - smoothing) * lp[t] + smoothing * lp[o])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(logits: &[f64], labels: &[u8], w: &ClassWeights, eps: f64) -> f64 {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(&[labels.len(), 2], logits.to_vec()).unwrap()).unwrap();
        let out = weighted_ce_loss(&mut g, l, labels, w, eps).unwrap();
        g.value(out).data()[0]
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let l = loss_of(&[-800.0, 800.0], &[1], &ClassWeights::uniform(), 0.0);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn equal_logits_normal_sample() {
        let l = loss_of(&[0.3, 0.3], &[0], &ClassWeights::from_pair(1.90, 0.68), 0.0);
        assert!((l - 1.90 * core::f64::consts::LN_2).abs() < 1e-15);
        assert!((l - 1.3170).abs() < 1e-4);
    }

    #[test]
    fn smoothing_keeps_loss_positive() {
        // logit gap 20: loss ≈ ε·gap
        let l = loss_of(&[0.0, 20.0], &[1], &ClassWeights::uniform(), 0.1);
        assert!(l > 0.0);
        assert!((l - 0.1 * 20.0).abs() < 1e-6);
    }

    #[test]
    fn contract_errors() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[1, 2])).unwrap();
        assert!(weighted_ce_loss(&mut g, l, &[2], &ClassWeights::uniform(), 0.0).is_err());
        assert!(weighted_ce_loss(&mut g, l, &[1], &ClassWeights::uniform(), 0.5).is_err());
        assert!(weighted_ce_loss(&mut g, l, &[1, 0], &ClassWeights::uniform(), 0.0).is_err());
    }

    #[test]
    fn per_sample_matches_graph_loss() {
        let logits = [0.2, -1.0, 3.0, 0.5, -0.25, -0.75];
        let labels = [0, 1, 1];
        let w = ClassWeights::from_pair(2.0, 0.5);
        let t = Tensor::new(&[3, 2], logits.to_vec()).unwrap();
        let per = per_sample_loss(&t, &labels, &w, 0.1);
        let mean = per.iter().sum::<f64>() / 3.0;
        assert!((mean - loss_of(&logits, &labels, &w, 0.1)).abs() < 1e-14);
    }
}
