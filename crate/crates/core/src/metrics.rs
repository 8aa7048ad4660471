//! Attack and model quality measures.

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::labels::LabelMultiset;
use crate::nn::Network;

/// Correctly extracted labels over `|D|`: `sum_i min(lambda_i^E, lambda_i^C) / |D|`.
pub fn attack_success_rate(extracted: &LabelMultiset, truth: &LabelMultiset) -> Result<f64> {
    let (e, c) = (extracted.total(), truth.total());
    if e != c {
        return Err(Error::TotalMismatch { left: e, right: c });
    }
    if e == 0 {
        return Err(Error::InvalidArgument("empty label multisets".into()));
    }
    if extracted.n_classes() != truth.n_classes() {
        return Err(Error::InvalidArgument("class counts differ".into()));
    }
    let overlap: usize = extracted
        .counts()
        .iter()
        .zip(truth.counts())
        .map(|(&a, &b)| a.min(b))
        .sum();
    Ok(overlap as f64 / e as f64)
}

/// Hellinger distance between the normalized label distributions, in `[0, 1]`.
pub fn hellinger(p: &LabelMultiset, q: &LabelMultiset) -> Result<f64> {
    let (tp, tq) = (p.total(), q.total());
    if tp == 0 || tq == 0 {
        return Err(Error::InvalidArgument("empty label multiset".into()));
    }
    let n = p.n_classes().max(q.n_classes());
    let sum: f64 = (0..n)
        .map(|i| {
            let a = (p.count(i) as f64 / tp as f64).sqrt();
            let b = (q.count(i) as f64 / tq as f64).sqrt();
            (a - b).powi(2)
        })
        .sum();
    Ok((sum / 2.0).sqrt().min(1.0))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs two equal-length sequences of at least 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fraction of samples whose arg-max prediction equals the label.
pub fn test_accuracy(net: &Network, test: &ClientDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let (inputs, labels) = test.as_batch()?;
    let predicted = net.predict(&inputs)?;
    let correct = predicted
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
