//! Opt-in / opt-out privacy filtering by factor-code replacement.
//!
//! Each hidden attribute's code is replaced by the codebook entry of a class
//! drawn uniformly over all its classes, original included. The residual
//! code is either kept or replaced by that of another batch member through a
//! uniform random permutation (fixed points allowed).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::logistic::{DescentConfig, Logistic};
use crate::model::{is_validation, FactorModel};
use crate::rng::{derive_seed, stream, Purpose};
use crate::schema::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Listed attributes are kept, all other factor codes hidden.
    OptIn,
    /// Listed attributes are hidden.
    OptOut,
}

impl FilterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::OptIn => "opt_in",
            FilterMode::OptOut => "opt_out",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    Keep,
    SwapWithinBatch,
}

impl ResidualMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualMode::Keep => "keep",
            ResidualMode::SwapWithinBatch => "swap_within_batch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub mode: FilterMode,
    pub attributes: Vec<String>,
    pub residual_mode: ResidualMode,
    #[serde(default)]
    pub seed: u64,
}

impl FilterPolicy {
    pub fn new(mode: FilterMode, attributes: &[&str], residual_mode: ResidualMode, seed: u64) -> Self {
        FilterPolicy {
            mode,
            attributes: attributes.iter().map(|s| s.to_string()).collect(),
            residual_mode,
            seed,
        }
    }

    /// Attribute indices whose codes are replaced, in ascending order. Only
    /// the model's disentangled attributes can be named or hidden.
    pub fn hidden_set(&self, model: &FactorModel) -> Result<Vec<usize>> {
        if self.attributes.is_empty() {
            return Err(Error::InvalidArgument("filter policy needs at least one attribute".into()));
        }
        let mut listed = Vec::with_capacity(self.attributes.len());
        for name in &self.attributes {
            let a = model.schema.index_of(name)?;
            if !model.is_disentangled(a) {
                return Err(Error::InvalidArgument(format!("attribute `{name}` is not disentangled by the model")));
            }
            listed.push(a);
        }
        let mut hidden: Vec<usize> = match self.mode {
            FilterMode::OptOut => listed,
            FilterMode::OptIn => model.disentangled.iter().copied().filter(|a| !listed.contains(a)).collect(),
        };
        hidden.sort_unstable();
        hidden.dedup();
        Ok(hidden)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredBatch {
    pub original_ids: Vec<u64>,
    /// Hidden attribute indices; columns of `replacement_labels`.
    pub hidden: Vec<usize>,
    pub replacement_labels: Vec<Vec<usize>>,
    /// `residual_permutation[i]` = batch index whose residual sample i received.
    pub residual_permutation: Option<Vec<usize>>,
    pub filtered_features: Vec<Vec<f64>>,
}

impl FilteredBatch {
    /// Filtered features with the batch's original labels.
    pub fn to_dataset(&self, batch: &Dataset) -> Result<Dataset> {
        batch.with_features(self.filtered_features.clone())
    }
}

/// Uniform replacement class for one (sample, attribute).
pub fn replacement_class(seed: u64, id: u64, attr: usize, k: usize) -> usize {
    stream(seed, Purpose::Replacement, derive_seed(id, &[attr as u64])).random_range(0..k)
}

/// Uniform random permutation of `0..n` (Fisher–Yates).
pub fn residual_permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Permutation, n as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

pub fn apply_filter(model: &FactorModel, batch: &Dataset, policy: &FilterPolicy) -> Result<FilteredBatch> {
    if batch.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if policy.residual_mode == ResidualMode::SwapWithinBatch && batch.len() < 2 {
        return Err(Error::InvalidArgument("residual swap requires ≥ 2 samples".into()));
    }
    if batch.feature_dim() != model.feature_dim {
        return Err(Error::Dimension {
            context: "filter batch",
            expected: model.feature_dim,
            found: batch.feature_dim(),
        });
    }
    let hidden = policy.hidden_set(model)?;
    let mut encoded = batch
        .samples()
        .par_iter()
        .map(|s| {
            let mut enc = model.encode(&s.features, None)?;
            let mut drawn = Vec::with_capacity(hidden.len());
            for &a in &hidden {
                let v = replacement_class(policy.seed, s.id, a, model.schema.cardinality(a));
                model.set_code(&mut enc, a, v)?;
                drawn.push(v);
            }
            Ok((enc, drawn))
        })
        .collect::<Result<Vec<_>>>()?;

    let permutation = match policy.residual_mode {
        ResidualMode::Keep => None,
        ResidualMode::SwapWithinBatch => {
            let perm = residual_permutation(policy.seed, batch.len());
            let residuals: Vec<Vec<f64>> = encoded.iter().map(|(e, _)| e.residual_code.clone()).collect();
            for (i, (e, _)) in encoded.iter_mut().enumerate() {
                e.residual_code = residuals[perm[i]].clone();
            }
            Some(perm)
        }
    };

    let filtered_features = encoded.par_iter().map(|(e, _)| model.decode(e)).collect::<Result<Vec<_>>>()?;
    Ok(FilteredBatch {
        original_ids: batch.samples().iter().map(|s| s.id).collect(),
        hidden,
        replacement_labels: encoded.into_iter().map(|(_, d)| d).collect(),
        residual_permutation: permutation,
        filtered_features,
    })
}

/// Summary written next to a filtered dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterAudit {
    pub policy: FilterPolicy,
    pub samples: usize,
    pub hidden_attributes: Vec<String>,
    /// Per hidden attribute, counts of each drawn replacement class.
    pub replacement_histogram: Vec<Vec<u64>>,
    /// SHA-256 of the permutation as little-endian u64 words, if swapped.
    pub residual_permutation_digest: Option<String>,
}

impl FilterAudit {
    pub fn new(model: &FactorModel, policy: &FilterPolicy, filtered: &FilteredBatch) -> Self {
        let replacement_histogram = filtered
            .hidden
            .iter()
            .enumerate()
            .map(|(col, &a)| {
                let mut h = vec![0u64; model.schema.cardinality(a)];
                for row in &filtered.replacement_labels {
                    h[row[col]] += 1;
                }
                h
            })
            .collect();
        let residual_permutation_digest = filtered.residual_permutation.as_ref().map(|p| {
            let mut hasher = Sha256::new();
            for &i in p {
                hasher.update((i as u64).to_le_bytes());
            }
            hex::encode(hasher.finalize())
        });
        FilterAudit {
            policy: policy.clone(),
            samples: filtered.original_ids.len(),
            hidden_attributes: filtered.hidden.iter().map(|&a| model.schema.name(a).to_string()).collect(),
            replacement_histogram,
            residual_permutation_digest,
        }
    }
}

pub const MIN_AUDIT_SAMPLES: usize = 200;

/// Probe training settings for [`audit_leakage`].
pub fn probe_config(seed: u64) -> DescentConfig {
    DescentConfig {
        epochs: 200,
        seed: derive_seed(seed, &[Purpose::Probe as u64]),
        ..DescentConfig::default()
    }
}

/// Trains a fresh linear probe on a train split and returns its held-out
/// accuracy.
pub fn probe_accuracy(features: &[Vec<f64>], ids: &[u64], labels: &[usize], k: usize, seed: u64) -> Result<f64> {
    if features.len() < MIN_AUDIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_AUDIT_SAMPLES,
            got: features.len(),
        });
    }
    let split_seed = derive_seed(seed, &[Purpose::Probe as u64]);
    let held: Vec<bool> = ids.iter().map(|&id| is_validation(id, split_seed, 0.25)).collect();
    let pick = |want: bool| {
        let rows: Vec<Vec<f64>> = (0..features.len()).filter(|&i| held[i] == want).map(|i| features[i].clone()).collect();
        let ys: Vec<usize> = (0..features.len()).filter(|&i| held[i] == want).map(|i| labels[i]).collect();
        (Matrix::from_rows(&rows), ys)
    };
    let (xtr, ytr) = pick(false);
    let (xte, yte) = pick(true);
    if xtr.rows == 0 || xte.rows == 0 {
        return Err(Error::InsufficientSamples {
            needed: MIN_AUDIT_SAMPLES,
            got: features.len(),
        });
    }
    let probe = Logistic::train(&xtr, &ytr, k, &probe_config(seed), 0)?;
    Ok(probe.accuracy(&xte, &yte))
}

/// Held-out accuracy of a fresh probe predicting the true `probe_attribute`
/// from filtered features: an upper-bound style leakage estimate.
pub fn audit_leakage(model: &FactorModel, batch: &Dataset, policy: &FilterPolicy, probe_attribute: &str) -> Result<f64> {
    let attr = model.schema.index_of(probe_attribute)?;
    if !policy.hidden_set(model)?.contains(&attr) {
        return Err(Error::InvalidArgument(format!("`{probe_attribute}` is not hidden by the policy")));
    }
    if batch.len() < MIN_AUDIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_AUDIT_SAMPLES,
            got: batch.len(),
        });
    }
    let filtered = apply_filter(model, batch, policy)?;
    probe_accuracy(
        &filtered.filtered_features,
        &filtered.original_ids,
        &batch.labels_of(attr),
        model.schema.cardinality(attr),
        policy.seed,
    )
}
