//! Label extraction from shared last-layer gradients.
//!
//! A label `i` that occurs `lambda_i` times in the data behind a gradient
//! moves the row sum `g_i` by roughly `lambda_i * m` (the *impact*, negative
//! and label-agnostic) on top of a label-specific *offset* `s_i` caused by
//! misclassification mass. The estimators below recover `m` and `s` under
//! three adversary capabilities, and [`llg_extract`] turns `g` into a label
//! multiset of the known size `|D|`.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::labels::LabelMultiset;
use crate::nn::{LastLayerGradient, Network};
use crate::tensor::Tensor;

/// Impact and offsets for one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackParams {
    pub impact: f64,
    pub offsets: Vec<f64>,
    pub sample_count: usize,
}

impl AttackParams {
    /// Used when the shared gradient has no negative entry: `m = -1/|D|`, `s = 0`.
    pub fn uniform_fallback(n_classes: usize, sample_count: usize) -> Self {
        Self {
            impact: -1.0 / sample_count as f64,
            offsets: vec![0.0; n_classes],
            sample_count,
        }
    }
}

/// Synthetic probe inputs for the white-box estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DummyKind {
    #[default]
    Zeros,
    Ones,
    UniformRandom,
}

/// What the adversary can observe besides the shared gradient.
#[derive(Debug, Clone, Copy)]
pub enum ThreatModel<'a> {
    SharedOnly,
    WhiteBox { dummy: DummyKind },
    Auxiliary { aux: &'a ClientDataset },
}

/// Attack variants as named in experiment configs and result files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Shared gradients only.
    Llg,
    /// White-box model with dummy probes.
    LlgStar,
    /// White-box model with auxiliary real data.
    LlgPlus,
    /// Uniform random guess.
    Random,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Llg => "llg",
            AttackKind::LlgStar => "llg_star",
            AttackKind::LlgPlus => "llg_plus",
            AttackKind::Random => "random",
        }
    }
}

/// How many probe batches the model-based estimators run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSchedule {
    /// Single-label batches of the target batch size per class, for the impact.
    pub impact_batches: usize,
    /// Batch sizes of the single-label offset probes.
    pub offset_batch_sizes: Vec<usize>,
    /// Offset probes per (label, size) pair.
    pub offset_batches_per_size: usize,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        Self {
            impact_batches: 10,
            offset_batch_sizes: vec![2, 8, 32],
            offset_batches_per_size: 1,
        }
    }
}

/// `m = (1/|D|) * sum_{i: g_i < 0} g_i * (1 + 1/n)`.
pub fn estimate_impact_shared(g: &LastLayerGradient) -> Result<f64> {
    let negative: f64 = g.g().iter().filter(|&&v| v < 0.0).sum();
    if !g.g().iter().any(|&v| v < 0.0) {
        return Err(Error::NoNegativeGradients);
    }
    let n = g.n_classes() as f64;
    Ok(negative / g.sample_count() as f64 * (1.0 + 1.0 / n))
}

/// Shared-gradients-only parameters: estimated impact, zero offsets.
pub fn estimate_params_shared(g: &LastLayerGradient) -> Result<AttackParams> {
    Ok(AttackParams {
        impact: estimate_impact_shared(g)?,
        offsets: vec![0.0; g.n_classes()],
        sample_count: g.sample_count(),
    })
}

/// Source of probe inputs for a given class.
trait ProbeSource {
    fn inputs(&self, label: usize, size: usize, rng: &mut dyn rand::RngCore) -> Result<Tensor>;
}

struct DummySource {
    kind: DummyKind,
    dim: usize,
}

impl ProbeSource for DummySource {
    fn inputs(&self, _label: usize, size: usize, rng: &mut dyn rand::RngCore) -> Result<Tensor> {
        let len = size * self.dim;
        let data = match self.kind {
            DummyKind::Zeros => vec![0.0; len],
            DummyKind::Ones => vec![1.0; len],
            DummyKind::UniformRandom => (0..len).map(|_| rng.random::<f64>()).collect(),
        };
        Tensor::new(vec![size, self.dim], data)
    }
}

struct AuxSource<'a> {
    aux: &'a ClientDataset,
    by_class: Vec<Vec<usize>>,
}

impl ProbeSource for AuxSource<'_> {
    fn inputs(&self, label: usize, size: usize, rng: &mut dyn rand::RngCore) -> Result<Tensor> {
        let pool = &self.by_class[label];
        let idx: Vec<usize> = (0..size).map(|_| *pool.choose(rng).unwrap()).collect();
        Ok(self.aux.batch(&idx)?.0)
    }
}

/// Row sums `g` of the last-layer gradient for a batch whose samples all carry `label`.
fn probe(net: &Network, inputs: &Tensor, label: usize) -> Result<Vec<f64>> {
    let labels = vec![label; inputs.rows()];
    let (_, grads, _) = net.loss_and_gradients(inputs, &labels)?;
    Ok(LastLayerGradient::from_gradients(&grads, labels.len())?
        .g()
        .to_vec())
}

fn estimate_with_probes(
    net: &Network,
    source: &dyn ProbeSource,
    batch_size: usize,
    sample_count: usize,
    schedule: &ProbeSchedule,
    rng: &mut dyn rand::RngCore,
) -> Result<AttackParams> {
    let n = net.n_classes();
    if batch_size == 0 || sample_count == 0 || !sample_count.is_multiple_of(batch_size) {
        return Err(Error::InvalidArgument(format!(
            "sample count {sample_count} is not a positive multiple of batch size {batch_size}"
        )));
    }
    if schedule.impact_batches == 0
        || schedule.offset_batches_per_size == 0
        || schedule.offset_batch_sizes.is_empty()
        || schedule.offset_batch_sizes.contains(&0)
    {
        return Err(Error::InvalidArgument("empty probe schedule".into()));
    }

    // Impact: per label, the mean g_i of single-label batches of the target size.
    let mut impact_sum = 0.0;
    for label in 0..n {
        let mut acc = 0.0;
        for _ in 0..schedule.impact_batches {
            let inputs = source.inputs(label, batch_size, rng)?;
            acc += probe(net, &inputs, label)?[label];
        }
        impact_sum += acc / schedule.impact_batches as f64;
    }
    let nf = n as f64;
    let impact = impact_sum / (nf * batch_size as f64) * (1.0 + 1.0 / nf);

    // Offsets: g_i observed on batches made entirely of some other label j.
    // One probe of label j serves every i != j.
    let mut acc = vec![0.0; n];
    let mut runs = vec![0usize; n];
    for label in 0..n {
        for &size in &schedule.offset_batch_sizes {
            for _ in 0..schedule.offset_batches_per_size {
                let inputs = source.inputs(label, size, rng)?;
                let g = probe(net, &inputs, label)?;
                for i in (0..n).filter(|&i| i != label) {
                    acc[i] += g[i];
                    runs[i] += 1;
                }
            }
        }
    }
    let iterations = (sample_count / batch_size) as f64;
    let offsets = acc
        .iter()
        .zip(&runs)
        .map(|(&a, &z)| a / z as f64 * iterations)
        .collect();

    Ok(AttackParams {
        impact,
        offsets,
        sample_count,
    })
}

/// White-box estimation with dummy inputs on a shadow copy of the model.
///
/// `batch_size` is the victim's per-iteration batch size and `sample_count`
/// the total `|D|` behind the shared gradient.
pub fn estimate_params_whitebox(
    net: &Network,
    dummy: DummyKind,
    batch_size: usize,
    sample_count: usize,
    schedule: &ProbeSchedule,
    rng: &mut impl Rng,
) -> Result<AttackParams> {
    let source = DummySource {
        kind: dummy,
        dim: net.input_len(),
    };
    estimate_with_probes(net, &source, batch_size, sample_count, schedule, rng)
}

/// Same estimator as [`estimate_params_whitebox`], probing with real
/// auxiliary samples drawn with replacement.
pub fn estimate_params_auxiliary(
    net: &Network,
    aux: &ClientDataset,
    batch_size: usize,
    sample_count: usize,
    schedule: &ProbeSchedule,
    rng: &mut impl Rng,
) -> Result<AttackParams> {
    if aux.n_classes != net.n_classes() {
        return Err(Error::InvalidArgument(format!(
            "auxiliary data has {} classes, model has {}",
            aux.n_classes,
            net.n_classes()
        )));
    }
    if aux.input_dim() != net.input_len() {
        return Err(Error::Shape(
            "auxiliary samples do not fit the model input".into(),
        ));
    }
    let by_class = aux.indices_by_class();
    if let Some(missing) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass(missing));
    }
    let source = AuxSource { aux, by_class };
    estimate_with_probes(net, &source, batch_size, sample_count, schedule, rng)
}

/// Dispatches to the estimator matching `threat`. `net` is the adversary's
/// shadow copy; it is ignored for [`ThreatModel::SharedOnly`].
pub fn estimate_params(
    threat: ThreatModel<'_>,
    g: &LastLayerGradient,
    net: &Network,
    batch_size: usize,
    schedule: &ProbeSchedule,
    rng: &mut impl Rng,
) -> Result<AttackParams> {
    match threat {
        ThreatModel::SharedOnly => estimate_params_shared(g),
        ThreatModel::WhiteBox { dummy } => {
            estimate_params_whitebox(net, dummy, batch_size, g.sample_count(), schedule, rng)
        }
        ThreatModel::Auxiliary { aux } => {
            estimate_params_auxiliary(net, aux, batch_size, g.sample_count(), schedule, rng)
        }
    }
}

/// Result of [`llg_extract_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Labels taken from negative gradient entries (the sign-based step).
    pub from_sign: Vec<usize>,
    /// The full extracted multiset, `|E| = |D|`.
    pub labels: LabelMultiset,
}

/// Extracts `|D|` labels from `g` given impact and offsets.
///
/// 1. Every label with `g_i < 0` is taken and `g_i` is reduced by one impact.
/// 2. Offsets are subtracted.
/// 3. Until `|D|` labels are taken, the label with the smallest remaining
///    `g_i` (lowest index on ties) is taken and reduced by one impact.
///
/// If step 1 finds more than `|D|` negative entries, only the `|D|` most
/// negative ones are kept.
pub fn llg_extract(g: &LastLayerGradient, params: &AttackParams) -> Result<LabelMultiset> {
    Ok(llg_extract_traced(g, params)?.labels)
}

pub fn llg_extract_traced(g: &LastLayerGradient, params: &AttackParams) -> Result<Extraction> {
    let n = g.n_classes();
    if params.offsets.len() != n {
        return Err(Error::Shape(format!(
            "{} offsets for {n} classes",
            params.offsets.len()
        )));
    }
    if params.sample_count != g.sample_count() {
        return Err(Error::InvalidArgument(format!(
            "parameters estimated for |D| = {}, gradient has |D| = {}",
            params.sample_count,
            g.sample_count()
        )));
    }
    if !params.impact.is_finite() || params.offsets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attack parameters"));
    }
    if g.g().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shared gradient"));
    }

    let target = g.sample_count();
    let m = params.impact;
    let mut work = g.g().to_vec();
    let mut labels = LabelMultiset::empty(n);

    let mut negative: Vec<usize> = (0..n).filter(|&i| work[i] < 0.0).collect();
    if negative.len() > target {
        negative.sort_by(|&a, &b| work[a].total_cmp(&work[b]).then(a.cmp(&b)));
        negative.truncate(target);
        negative.sort_unstable();
    }
    for &i in &negative {
        labels.push(i)?;
        work[i] -= m;
    }

    for (w, s) in work.iter_mut().zip(&params.offsets) {
        *w -= s;
    }

    while labels.total() < target {
        let mut best = 0;
        for i in 1..n {
            if work[i] < work[best] {
                best = i;
            }
        }
        labels.push(best)?;
        work[best] -= m;
    }

    Ok(Extraction {
        from_sign: negative,
        labels,
    })
}

/// `count` labels drawn uniformly from `n` classes.
pub fn random_guess(n_classes: usize, count: usize, rng: &mut impl Rng) -> LabelMultiset {
    let mut labels = LabelMultiset::empty(n_classes);
    for _ in 0..count {
        labels
            .push(rng.random_range(0..n_classes))
            .expect("label in range");
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grad(g: &[f64], d: usize) -> LastLayerGradient {
        LastLayerGradient::from_sums(g.to_vec(), d).unwrap()
    }

    #[test]
    fn shared_impact_arithmetic() {
        let mut g = vec![0.1; 10];
        g[2] = -0.5;
        g[7] = -0.3;
        let m = estimate_impact_shared(&grad(&g, 8)).unwrap();
        assert_abs_diff_eq!(m, -0.11, epsilon = 1e-15);
    }

    #[test]
    fn shared_impact_needs_a_negative_entry() {
        let g = grad(&[0.0, 0.2, 0.1], 2);
        assert!(matches!(
            estimate_impact_shared(&g),
            Err(Error::NoNegativeGradients)
        ));
    }

    #[test]
    fn hand_traced_extraction() {
        let params = AttackParams {
            impact: -0.5,
            offsets: vec![0.0; 3],
            sample_count: 2,
        };
        let out = llg_extract_traced(&grad(&[-0.4, 0.1, 0.2], 2), &params).unwrap();
        assert_eq!(out.from_sign, vec![0]);
        assert_eq!(out.labels.counts(), &[2, 0, 0]);
    }

    #[test]
    fn saturated_sign_step() {
        let params = AttackParams {
            impact: -1.0,
            offsets: vec![0.0; 5],
            sample_count: 2,
        };
        let e = llg_extract(&grad(&[0.3, -0.2, 0.1, -0.7, 0.0], 2), &params).unwrap();
        assert_eq!(e.counts(), &[0, 1, 0, 1, 0]);
    }

    #[test]
    fn excess_negatives_keep_the_most_negative() {
        let params = AttackParams {
            impact: -1.0,
            offsets: vec![0.0; 4],
            sample_count: 2,
        };
        let e = llg_extract(&grad(&[-0.1, -0.9, -0.5, -0.05], 2), &params).unwrap();
        assert_eq!(e.counts(), &[0, 1, 1, 0]);
    }

    #[test]
    fn extraction_guards() {
        let params = AttackParams {
            impact: -1.0,
            offsets: vec![0.0; 3],
            sample_count: 3,
        };
        assert!(llg_extract(&grad(&[0.0, 0.0, 0.0], 2), &params).is_err());
        let mut bad = params.clone();
        bad.impact = f64::NAN;
        assert!(matches!(
            llg_extract(&grad(&[0.0; 3], 3), &bad),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn random_guess_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = random_guess(1, 5, &mut rng);
        assert_eq!(e.counts(), &[5]);
        assert_eq!(random_guess(10, 37, &mut rng).total(), 37);
    }

    #[test]
    fn whitebox_rejects_bad_schedule() {
        let net = Network::mlp(4, 3, 2, crate::nn::Activation::Sigmoid, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = ProbeSchedule {
            offset_batch_sizes: vec![],
            ..ProbeSchedule::default()
        };
        assert!(estimate_params_whitebox(&net, DummyKind::Zeros, 2, 2, &empty, &mut rng).is_err());
        assert!(estimate_params_whitebox(
            &net,
            DummyKind::Zeros,
            2,
            3,
            &ProbeSchedule::default(),
            &mut rng
        )
        .is_err());
    }
}
