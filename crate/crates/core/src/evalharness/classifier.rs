use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::source::AugmentationSource;
use crate::error::{Error, Result};
use crate::nnkit::{
    mlp_backward, mlp_forward, Activation, AdamConfig, AdamState, Matrix, MlpSpec, ParamStore,
};
use crate::synthworld::CropSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Full-batch Adam steps.
    pub epochs: usize,
    /// L2 penalty on the weights (not the biases).
    pub weight_decay: f64,
    pub adam: AdamConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            weight_decay: 0.1,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(Error::Config("classifier adam.lr must be positive".into()));
        }
        Ok(())
    }
}

/// Linear softmax classifier. Row `i` of the weight matrix scores
/// `class_ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub class_ids: Vec<u32>,
    pub store: ParamStore,
    spec: MlpSpec,
}

impl ClassifierParams {
    /// Glorot-initialised weights, zero biases.
    pub fn init(class_ids: &[u32], feature_dim: usize, seed: u64) -> Result<Self> {
        if class_ids.is_empty() {
            return Err(Error::Config("classifier needs at least one class".into()));
        }
        let spec = MlpSpec::new(
            vec![feature_dim, class_ids.len()],
            vec![Activation::Identity],
        )?;
        let store = ParamStore::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            class_ids: class_ids.to_vec(),
            store,
            spec,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.store.is_finite()
    }

    /// Softmax probabilities, one row per input row.
    pub fn predict_proba_batch(&self, features: &Matrix) -> Result<Matrix> {
        let (mut logits, _) = mlp_forward(&self.store, &self.spec, features)?;
        for r in 0..logits.rows() {
            softmax_in_place(logits.row_mut(r));
        }
        Ok(logits)
    }

    pub fn predict_proba(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .predict_proba_batch(&Matrix::row_vector(feature)?)?
            .into_data())
    }

    /// Index into `class_ids` of the most probable class (first on ties).
    pub fn predict_index(&self, feature: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(feature)?))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Fits a classifier on the real shots pooled with the generated features of
/// `aug`; both kinds count equally in the cross-entropy.
pub fn train_classifier(
    class_ids: &[u32],
    real: &[CropSample],
    aug: &AugmentationSource,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<ClassifierParams> {
    cfg.validate()?;
    let index: BTreeMap<u32, usize> = class_ids.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    if index.len() != class_ids.len() {
        return Err(Error::Config(
            "duplicate class id in classifier class list".into(),
        ));
    }
    let mut seen = vec![false; class_ids.len()];
    let mut rows: Vec<&[f64]> = Vec::with_capacity(real.len() + aug.generated.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    let label_of = |class_id: u32, what: &str| {
        index.get(&class_id).copied().ok_or_else(|| {
            Error::Config(format!(
                "{what} has class {class_id}, which is not being classified"
            ))
        })
    };
    for s in real {
        let l = label_of(s.class_id, "real sample")?;
        seen[l] = true;
        rows.push(&s.feature);
        labels.push(l);
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!(
            "class {} has no real training sample",
            class_ids[i]
        )));
    }
    for g in &aug.generated {
        rows.push(&g.feature);
        labels.push(label_of(g.class_id, "generated feature")?);
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::shape("classifier training feature", dim, bad.len()));
    }
    let x = Matrix::new(rows.len(), dim, rows.concat())?;

    let mut params = ClassifierParams::init(class_ids, dim, seed)?;
    let mut adam = AdamState::new(cfg.adam, &[&params.store]);
    let scale = 1.0 / x.rows() as f64;
    for _ in 0..cfg.epochs {
        let (logits, trace) = mlp_forward(&params.store, &params.spec, &x)?;
        let mut grad = logits;
        for (r, &l) in labels.iter().enumerate() {
            let row = grad.row_mut(r);
            softmax_in_place(row);
            row[l] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        let (mut g, _) = mlp_backward(&params.store, &params.spec, &trace, &grad)?;
        let w = params.store.layers()[0].weight.data();
        for (gw, pw) in g.layers_mut()[0].weight.data_mut().iter_mut().zip(w) {
            *gw += cfg.weight_decay * pw;
        }
        adam.step(&mut [&mut params.store], &[&g])?;
    }
    Ok(params)
}

/// Mean cross-entropy without the weight penalty; used by tests as an
/// independent check on training progress.
pub fn cross_entropy(params: &ClassifierParams, samples: &[(&[f64], u32)]) -> Result<f64> {
    let mut total = 0.0;
    for (f, class_id) in samples {
        let l = params
            .class_ids
            .iter()
            .position(|c| c == class_id)
            .ok_or_else(|| Error::Config(format!("class {class_id} is not being classified")))?;
        total -= params.predict_proba(f)?[l].ln();
    }
    Ok(total / samples.len() as f64)
}
