use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output of [`cross_entropy_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Batch-mean softmax cross-entropy.
    pub loss: f64,
    /// Per-class gradient w.r.t. the output scores, summed over the batch:
    /// `d_i = -lambda_i / B + (1/B) * sum_k softmax_i(k)`.
    pub d: Vec<f64>,
    /// Per-sample gradient of the batch-mean loss w.r.t. the logits, `[B, n]`.
    pub grad_logits: Tensor,
    /// Per-sample softmax probabilities, `[B, n]`.
    pub probs: Tensor,
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Softmax cross-entropy averaged over a batch.
///
/// Labels are zero-based class indices.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "logits must be [B, n], got {:?}",
            logits.shape()
        )));
    }
    let (batch, n) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: n,
        });
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("logits"));
    }

    let inv_b = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut d = vec![0.0; n];
    let mut grad_logits = Tensor::zeros(vec![batch, n]);
    let mut probs = Tensor::zeros(vec![batch, n]);
    for (k, &label) in labels.iter().enumerate() {
        let row = logits.row(k);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[label];
        let p = softmax(row);
        let g = grad_logits.row_mut(k);
        for i in 0..n {
            let indicator = if i == label { 1.0 } else { 0.0 };
            g[i] = (p[i] - indicator) * inv_b;
            d[i] += g[i];
        }
        probs.row_mut(k).copy_from_slice(&p);
    }

    Ok(LossOutput {
        loss: loss * inv_b,
        d,
        grad_logits,
        probs,
    })
}
