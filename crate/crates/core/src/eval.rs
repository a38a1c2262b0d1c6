//! Filtering experiments: relative-accuracy matrices, correlation versus
//! accuracy-drop regressions, the unseen-attribute study, and the report
//! that bundles them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filter::{apply_filter, FilterMode, FilterPolicy, ResidualMode};
use crate::model::{train, FactorModel, Hyperparams};
use crate::rng::derive_seed;
use crate::schema::Dataset;
use crate::stats::{association_matrix, pearson, AssociationMatrix, LabelSource, Metric, RegressionSummary};
use crate::synthworld::{make_world_from, WorldConfig};

pub const DEFAULT_TRIALS: usize = 5;

/// Mean and standard deviation of per-attribute accuracy under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAccuracy {
    pub policy: FilterPolicy,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Accuracy of the model's classifiers on raw features.
pub fn base_accuracy(model: &FactorModel, data: &Dataset) -> Vec<f64> {
    (0..model.schema.len())
        .map(|a| {
            let hits = data.samples().iter().filter(|s| model.predict(&s.features, a) == s.labels[a]).count();
            hits as f64 / data.len() as f64
        })
        .collect()
}

/// Relative frequency of the most common class per attribute.
pub fn majority_accuracy(data: &Dataset) -> Vec<f64> {
    let schema = data.schema();
    (0..schema.len())
        .map(|a| {
            let mut counts = vec![0usize; schema.cardinality(a)];
            for s in data.samples() {
                counts[s.labels[a]] += 1;
            }
            *counts.iter().max().unwrap_or(&0) as f64 / data.len().max(1) as f64
        })
        .collect()
}

fn trial_seed(seed: u64, policy_index: usize, trial: usize) -> u64 {
    derive_seed(seed, &[policy_index as u64, trial as u64])
}

/// Classifier accuracy of every attribute on filtered features, averaged
/// over `n_trials` replacement seeds. Each policy's own seed is ignored;
/// trial seeds derive from `seed`, the policy index and the trial number.
pub fn policy_accuracies(
    model: &FactorModel,
    data: &Dataset,
    policies: &[FilterPolicy],
    n_trials: usize,
    seed: u64,
) -> Result<Vec<PolicyAccuracy>> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let m = model.schema.len();
    let cells: Vec<(usize, usize)> = (0..policies.len()).flat_map(|p| (0..n_trials).map(move |t| (p, t))).collect();
    let accs = cells
        .par_iter()
        .map(|&(p, t)| {
            let policy = FilterPolicy {
                seed: trial_seed(seed, p, t),
                ..policies[p].clone()
            };
            let fb = apply_filter(model, data, &policy)?;
            let acc: Vec<f64> = (0..m)
                .map(|a| {
                    let hits = data
                        .samples()
                        .iter()
                        .zip(&fb.filtered_features)
                        .filter(|(s, x)| model.predict(x, a) == s.labels[a])
                        .count();
                    hits as f64 / data.len() as f64
                })
                .collect();
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(policies
        .iter()
        .enumerate()
        .map(|(p, policy)| {
            let trials = &accs[p * n_trials..(p + 1) * n_trials];
            let mean: Vec<f64> = (0..m).map(|a| trials.iter().map(|t| t[a]).sum::<f64>() / n_trials as f64).collect();
            let std = (0..m)
                .map(|a| {
                    if n_trials < 2 {
                        return 0.0;
                    }
                    let ss: f64 = trials.iter().map(|t| (t[a] - mean[a]).powi(2)).sum();
                    (ss / (n_trials - 1) as f64).sqrt()
                })
                .collect();
            PolicyAccuracy {
                policy: policy.clone(),
                mean,
                std,
            }
        })
        .collect())
}

/// Rows are classified attributes (all schema attributes), columns are
/// filtered attributes (the model's disentangled ones).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub mode: FilterMode,
    pub residual_mode: ResidualMode,
    pub classified_attributes: Vec<String>,
    pub filtered_attributes: Vec<String>,
    /// Filtered over unfiltered accuracy; `None` where base accuracy is 0.
    pub rel_acc: Vec<Vec<Option<f64>>>,
    pub abs_acc: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub base_acc: Vec<f64>,
    pub majority_acc: Vec<f64>,
    pub random_acc: Vec<f64>,
    pub n_trials: usize,
}

impl AccuracyMatrix {
    /// Row index of the attribute filtered in column `col`, if classified.
    pub fn diagonal_row(&self, col: usize) -> Option<usize> {
        self.classified_attributes.iter().position(|a| *a == self.filtered_attributes[col])
    }

    /// Relative accuracy of each filtered attribute under its own filter.
    pub fn diagonal(&self) -> Vec<Option<f64>> {
        (0..self.filtered_attributes.len())
            .map(|c| self.diagonal_row(c).and_then(|r| self.rel_acc[r][c]))
            .collect()
    }

    /// Mean relative accuracy over defined entries with row ≠ filtered attribute.
    pub fn mean_off_diagonal(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in 0..self.filtered_attributes.len() {
            let diag = self.diagonal_row(c);
            for r in 0..self.classified_attributes.len() {
                if Some(r) == diag {
                    continue;
                }
                if let Some(v) = self.rel_acc[r][c] {
                    sum += v;
                    n += 1;
                }
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }

    pub fn mean_diagonal(&self) -> f64 {
        let d: Vec<f64> = self.diagonal().into_iter().flatten().collect();
        d.iter().sum::<f64>() / d.len() as f64
    }
}

pub fn accuracy_matrix(
    model: &FactorModel,
    data: &Dataset,
    mode: FilterMode,
    residual_mode: ResidualMode,
    n_trials: usize,
    seed: u64,
) -> Result<AccuracyMatrix> {
    let schema = &model.schema;
    let policies: Vec<FilterPolicy> = model
        .disentangled
        .iter()
        .map(|&a| FilterPolicy::new(mode, &[schema.name(a)], residual_mode, 0))
        .collect();
    let seed = derive_seed(seed, &[mode as u64, residual_mode as u64]);
    let results = policy_accuracies(model, data, &policies, n_trials, seed)?;
    let base = base_accuracy(model, data);
    let m = schema.len();
    let cols = results.len();
    let abs_acc: Vec<Vec<f64>> = (0..m).map(|r| (0..cols).map(|c| results[c].mean[r]).collect()).collect();
    let std = (0..m).map(|r| (0..cols).map(|c| results[c].std[r]).collect()).collect();
    let rel_acc = (0..m)
        .map(|r| {
            (0..cols)
                .map(|c| if base[r] > 0.0 { Some(abs_acc[r][c] / base[r]) } else { None })
                .collect()
        })
        .collect();
    Ok(AccuracyMatrix {
        mode,
        residual_mode,
        classified_attributes: schema.names(),
        filtered_attributes: model.disentangled.iter().map(|&a| schema.name(a).to_string()).collect(),
        rel_acc,
        abs_acc,
        std,
        base_acc: base,
        majority_acc: majority_accuracy(data),
        random_acc: schema.cardinalities().iter().map(|&k| 1.0 / k as f64).collect(),
        n_trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropPoint {
    pub filtered: String,
    pub classified: String,
    pub correlation_value: f64,
    pub accuracy_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropCorrelationStudy {
    pub metric: Metric,
    pub mode: FilterMode,
    pub residual_mode: ResidualMode,
    pub points: Vec<DropPoint>,
    /// `None` when the drops or the correlation values are all equal.
    pub summary: Option<RegressionSummary>,
}

/// One point per ordered pair (X filtered, Y classified), X ≠ Y:
/// drop = base accuracy of Y − accuracy of Y when filtering X. For the
/// uncertainty coefficient the correlation value is U(Y|X).
pub fn drop_correlation_study(assoc: &AssociationMatrix, acc: &AccuracyMatrix) -> Result<DropCorrelationStudy> {
    if assoc.attributes != acc.classified_attributes {
        return Err(Error::InvalidArgument("association and accuracy matrices cover different attributes".into()));
    }
    let mut points = Vec::new();
    for (c, x_name) in acc.filtered_attributes.iter().enumerate() {
        let x = assoc.attributes.iter().position(|a| a == x_name).ok_or_else(|| Error::UnknownAttribute(x_name.clone()))?;
        for y in 0..acc.classified_attributes.len() {
            if y == x {
                continue;
            }
            points.push(DropPoint {
                filtered: x_name.clone(),
                classified: acc.classified_attributes[y].clone(),
                correlation_value: assoc.get(y, x),
                accuracy_drop: acc.base_acc[y] - acc.abs_acc[y][c],
            });
        }
    }
    if points.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: points.len(),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.correlation_value).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.accuracy_drop).collect();
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    let summary = if constant(&xs) || constant(&ys) { None } else { Some(pearson(&xs, &ys)?) };
    Ok(DropCorrelationStudy {
        metric: assoc.metric,
        mode: acc.mode,
        residual_mode: acc.residual_mode,
        summary,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenRow {
    pub mode: FilterMode,
    pub residual_mode: ResidualMode,
    /// Attribute named by the single-attribute policy.
    pub filtered_attribute: String,
    pub acc_with_factor: f64,
    pub acc_without_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenAttributeResult {
    pub held_out_attribute: String,
    pub base_acc: f64,
    pub majority_acc: f64,
    pub evaluation_samples: usize,
    pub rows: Vec<UnseenRow>,
}

impl UnseenAttributeResult {
    pub fn row(&self, mode: FilterMode, residual_mode: ResidualMode, filtered: &str) -> Option<&UnseenRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.residual_mode == residual_mode && r.filtered_attribute == filtered)
    }
}

/// Held-out attribute accuracy under every single-attribute policy for a
/// model that disentangles it (`with`) and one that does not (`without`).
/// Under opt-in the `with` model also keeps the held-out attribute, since
/// only that model can name it. Both models' classifiers for the held-out
/// attribute are trained identically; `with`'s is the evaluator.
pub fn unseen_attribute_eval(
    with: &FactorModel,
    without: &FactorModel,
    data: &Dataset,
    held_out: &str,
    n_trials: usize,
    seed: u64,
) -> Result<UnseenAttributeResult> {
    let h = with.schema.index_of(held_out)?;
    if !with.is_disentangled(h) || without.is_disentangled(h) {
        return Err(Error::InvalidArgument(format!(
            "`{held_out}` must be disentangled by exactly the first model"
        )));
    }
    let mut rows = Vec::new();
    for mode in [FilterMode::OptOut, FilterMode::OptIn] {
        for residual_mode in [ResidualMode::Keep, ResidualMode::SwapWithinBatch] {
            for &x in &without.disentangled {
                let name = with.schema.name(x);
                let with_policy = match mode {
                    FilterMode::OptOut => FilterPolicy::new(mode, &[name], residual_mode, 0),
                    FilterMode::OptIn => FilterPolicy::new(mode, &[name, held_out], residual_mode, 0),
                };
                let without_policy = FilterPolicy::new(mode, &[name], residual_mode, 0);
                let cell = derive_seed(seed, &[mode as u64, residual_mode as u64, x as u64]);
                let acc_of = |model: &FactorModel, policy: FilterPolicy| -> Result<f64> {
                    let mut total = 0.0;
                    for t in 0..n_trials {
                        let fb = apply_filter(
                            model,
                            data,
                            &FilterPolicy {
                                seed: derive_seed(cell, &[t as u64]),
                                ..policy.clone()
                            },
                        )?;
                        let hits = data
                            .samples()
                            .iter()
                            .zip(&fb.filtered_features)
                            .filter(|(s, f)| with.predict(f, h) == s.labels[h])
                            .count();
                        total += hits as f64 / data.len() as f64;
                    }
                    Ok(total / n_trials as f64)
                };
                rows.push(UnseenRow {
                    mode,
                    residual_mode,
                    filtered_attribute: name.to_string(),
                    acc_with_factor: acc_of(with, with_policy)?,
                    acc_without_factor: acc_of(without, without_policy)?,
                });
            }
        }
    }
    Ok(UnseenAttributeResult {
        held_out_attribute: held_out.to_string(),
        base_acc: base_accuracy(with, data)[h],
        majority_acc: majority_accuracy(data)[h],
        evaluation_samples: data.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnseenConfig {
    pub held_out: String,
    pub world: WorldConfig,
    pub hyperparams: Hyperparams,
    pub train_samples: usize,
    pub eval_samples: usize,
}

impl Default for UnseenConfig {
    fn default() -> Self {
        UnseenConfig {
            held_out: "glasses".into(),
            world: WorldConfig::default(),
            hyperparams: Hyperparams::default(),
            train_samples: 5000,
            eval_samples: 5000,
        }
    }
}

/// Trains the two models of the unseen-attribute study on a fresh world
/// and evaluates them on disjoint samples.
pub fn unseen_attribute_study(cfg: &UnseenConfig, n_trials: usize, seed: u64) -> Result<UnseenAttributeResult> {
    let spec = cfg.world.build()?;
    let h = spec.schema.index_of(&cfg.held_out)?;
    let train_set = make_world_from(&spec, 0, cfg.train_samples)?;
    let eval_set = make_world_from(&spec, cfg.train_samples as u64, cfg.eval_samples)?;
    let all: Vec<usize> = (0..spec.schema.len()).collect();
    let rest: Vec<usize> = all.iter().copied().filter(|&a| a != h).collect();
    let with = train(&train_set, &cfg.hyperparams, &all)?;
    let without = train(&train_set, &cfg.hyperparams, &rest)?;
    unseen_attribute_eval(&with, &without, &eval_set, &cfg.held_out, n_trials, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub unseen: UnseenConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_trials: DEFAULT_TRIALS,
            seed: 0,
            unseen: UnseenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seeds: BTreeMap<String, u64>,
    /// Hex SHA-256 digests of the canonical JSON of each named input.
    pub digests: BTreeMap<String, String>,
}

/// Hex SHA-256 of a value's compact JSON serialization.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub matrices: Vec<AccuracyMatrix>,
    pub correlations: Vec<AssociationMatrix>,
    pub studies: Vec<DropCorrelationStudy>,
    pub unseen: UnseenAttributeResult,
    pub provenance: Provenance,
}

impl EvaluationReport {
    pub fn matrix(&self, mode: FilterMode, residual_mode: ResidualMode) -> Option<&AccuracyMatrix> {
        self.matrices.iter().find(|m| m.mode == mode && m.residual_mode == residual_mode)
    }

    pub fn study(&self, metric: Metric, mode: FilterMode) -> Option<&DropCorrelationStudy> {
        self.studies.iter().find(|s| s.metric == metric && s.mode == mode)
    }

    pub fn correlation(&self, metric: Metric) -> Option<&AssociationMatrix> {
        self.correlations.iter().find(|c| c.metric == metric)
    }
}

/// Sub-results gathered before assembly.
#[derive(Debug, Clone, Default)]
pub struct ReportParts {
    pub matrices: Vec<AccuracyMatrix>,
    pub correlations: Vec<AssociationMatrix>,
    pub studies: Vec<DropCorrelationStudy>,
    pub unseen: Option<UnseenAttributeResult>,
    pub provenance: Option<Provenance>,
}

const MODES: [FilterMode; 2] = [FilterMode::OptOut, FilterMode::OptIn];
const RESIDUAL_MODES: [ResidualMode; 2] = [ResidualMode::Keep, ResidualMode::SwapWithinBatch];

fn missing_matrix(mode: FilterMode, residual_mode: ResidualMode) -> &'static str {
    match (mode, residual_mode) {
        (FilterMode::OptOut, ResidualMode::Keep) => "accuracy matrix opt_out/keep",
        (FilterMode::OptOut, ResidualMode::SwapWithinBatch) => "accuracy matrix opt_out/swap_within_batch",
        (FilterMode::OptIn, ResidualMode::Keep) => "accuracy matrix opt_in/keep",
        (FilterMode::OptIn, ResidualMode::SwapWithinBatch) => "accuracy matrix opt_in/swap_within_batch",
    }
}

fn missing_study(metric: Metric, mode: FilterMode) -> &'static str {
    match (metric, mode) {
        (Metric::CramersV, FilterMode::OptOut) => "drop study cramers_v/opt_out",
        (Metric::CramersV, FilterMode::OptIn) => "drop study cramers_v/opt_in",
        (Metric::UncertaintyCoefficient, FilterMode::OptOut) => "drop study uncertainty_coefficient/opt_out",
        (Metric::UncertaintyCoefficient, FilterMode::OptIn) => "drop study uncertainty_coefficient/opt_in",
    }
}

/// Checks that every sub-report is present and orders them canonically.
pub fn build_report(parts: ReportParts) -> Result<EvaluationReport> {
    let mut matrices = Vec::with_capacity(4);
    for mode in MODES {
        for rm in RESIDUAL_MODES {
            let m = parts
                .matrices
                .iter()
                .find(|m| m.mode == mode && m.residual_mode == rm)
                .ok_or(Error::MissingReport(missing_matrix(mode, rm)))?;
            matrices.push(m.clone());
        }
    }
    let mut correlations = Vec::with_capacity(2);
    for metric in Metric::ALL {
        let c = parts.correlations.iter().find(|c| c.metric == metric).ok_or(Error::MissingReport(match metric {
            Metric::CramersV => "correlation cramers_v",
            Metric::UncertaintyCoefficient => "correlation uncertainty_coefficient",
        }))?;
        correlations.push(c.clone());
    }
    let mut studies = Vec::with_capacity(4);
    for metric in Metric::ALL {
        for mode in MODES {
            let s = parts
                .studies
                .iter()
                .find(|s| s.metric == metric && s.mode == mode)
                .ok_or(Error::MissingReport(missing_study(metric, mode)))?;
            studies.push(s.clone());
        }
    }
    Ok(EvaluationReport {
        matrices,
        correlations,
        studies,
        unseen: parts.unseen.ok_or(Error::MissingReport("unseen attribute study"))?,
        provenance: parts.provenance.ok_or(Error::MissingReport("provenance"))?,
    })
}

/// Runs every experiment on one model and evaluation set. The drop studies
/// use the residual-keep matrices and ground-truth associations.
pub fn run_evaluation(
    model: &FactorModel,
    data: &Dataset,
    cfg: &EvalConfig,
    mut provenance: Provenance,
) -> Result<EvaluationReport> {
    let mut parts = ReportParts::default();
    for mode in MODES {
        for rm in RESIDUAL_MODES {
            parts.matrices.push(accuracy_matrix(model, data, mode, rm, cfg.n_trials, cfg.seed)?);
        }
    }
    for metric in Metric::ALL {
        parts.correlations.push(association_matrix(data, metric, LabelSource::GroundTruth)?);
    }
    for metric in Metric::ALL {
        let assoc = parts.correlations.iter().find(|c| c.metric == metric).expect("computed above");
        for mode in MODES {
            let acc = parts
                .matrices
                .iter()
                .find(|m| m.mode == mode && m.residual_mode == ResidualMode::Keep)
                .expect("computed above");
            parts.studies.push(drop_correlation_study(assoc, acc)?);
        }
    }
    parts.unseen = Some(unseen_attribute_study(&cfg.unseen, cfg.n_trials, cfg.seed)?);
    provenance.seeds.insert("eval".into(), cfg.seed);
    provenance.seeds.insert("unseen_world".into(), cfg.unseen.world.seed);
    provenance.seeds.insert("unseen_training".into(), cfg.unseen.hyperparams.seed);
    provenance.digests.insert("eval_config".into(), digest_json(cfg));
    provenance.digests.insert("model".into(), digest_json(model));
    parts.provenance = Some(provenance);
    build_report(parts)
}
