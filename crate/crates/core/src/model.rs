//! Linear factor model: per-attribute classifiers, factor codebooks, a
//! residual encoder and a linear decoder.
//!
//! Training minimizes
//! `L = Σ_a CE_a + MSE(decode(encode(x)), x) + β · overlap`, where the
//! overlap penalty is the mean squared Pearson correlation between residual
//! coordinates and the one-hot indicators of disentangled attributes. Codes
//! are looked up from the classifiers' predicted labels, so the
//! reconstruction and overlap terms are piecewise constant in the classifier
//! weights. Training therefore runs in two stages: the classifiers on
//! cross-entropy, then codebooks, residual encoder and decoder with the
//! classifiers frozen.
//!
//! The reconstruction and overlap terms depend on the data only through the
//! second-moment matrix of `u = [one-hot predicted labels; x; 1]`, so both
//! are computed from that matrix instead of per sample.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, axpy, cholesky, cholesky_solve, chunked_sum, dot, softmax_in_place, Matrix};
use crate::logistic::{descend, Logistic};
use crate::rng::{derive_seed, splitmix64, stream, Purpose};
use crate::schema::{AttributeSchema, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    /// Step-size multiplier after an accepted step; 1.0 gives plain
    /// step-halving descent.
    pub lr_growth: f64,
    pub epochs: usize,
    /// β, weight of the overlap penalty.
    pub penalty_weight: f64,
    pub factor_dim: usize,
    pub residual_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.5,
            lr_growth: 1.1,
            epochs: 400,
            penalty_weight: 1.0,
            factor_dim: 8,
            residual_dim: 16,
            init_scale: 0.01,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAccuracy {
    pub attribute: String,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: Vec<f64>,
    pub reconstruction: f64,
    pub overlap: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Σ cross-entropy before the first classifier step and after every epoch.
    pub classifier_loss_history: Vec<f64>,
    /// Reconstruction + β·overlap before the first autoencoder step and after
    /// every epoch, classifiers frozen.
    pub autoencoder_loss_history: Vec<f64>,
    /// Number of step-size halvings across all blocks.
    pub halvings: u64,
    pub final_loss: LossBreakdown,
    pub train_samples: usize,
    pub validation_samples: usize,
    /// Mean ‖x̂ − x‖ / ‖x‖ on the validation split, predicted codes.
    pub validation_reconstruction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub schema: AttributeSchema,
    pub feature_dim: usize,
    /// Attribute indices that own a factor code, in code order.
    pub disentangled: Vec<usize>,
    /// One classifier per schema attribute.
    pub classifiers: Vec<Logistic>,
    /// Per disentangled attribute, `k × factor_dim`.
    pub codebooks: Vec<Matrix>,
    /// `residual_dim × d`
    pub residual_encoder: Matrix,
    pub residual_bias: Vec<f64>,
    /// `d × (|disentangled| · factor_dim + residual_dim)`
    pub decoder: Matrix,
    pub decoder_bias: Vec<f64>,
    pub hyperparams: Hyperparams,
    pub accuracies: Vec<AttributeAccuracy>,
    pub training: Option<TrainingLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSample {
    /// Classifier argmax for every schema attribute.
    pub predicted_labels: Vec<usize>,
    /// Class whose code is in `factor_codes`, per disentangled attribute.
    pub code_labels: Vec<usize>,
    pub factor_codes: Vec<Vec<f64>>,
    pub residual_code: Vec<f64>,
}

/// Autoencoder parameters in one flat vector:
/// codebooks, residual encoder, residual bias, decoder, decoder bias.
#[derive(Debug, Clone)]
struct AeLayout {
    cards: Vec<usize>,
    d: usize,
    f: usize,
    q: usize,
    /// Offset of each disentangled attribute's one-hot block in u.
    onehot_offsets: Vec<usize>,
    x_offset: usize,
    const_index: usize,
}

impl AeLayout {
    fn new(schema: &AttributeSchema, disentangled: &[usize], d: usize, f: usize, q: usize) -> Self {
        let cards: Vec<usize> = disentangled.iter().map(|&a| schema.cardinality(a)).collect();
        let mut onehot_offsets = Vec::with_capacity(cards.len());
        let mut off = 0;
        for &k in &cards {
            onehot_offsets.push(off);
            off += k;
        }
        AeLayout {
            cards,
            d,
            f,
            q,
            onehot_offsets,
            x_offset: off,
            const_index: off + d,
        }
    }

    fn u_dim(&self) -> usize {
        self.const_index + 1
    }

    fn z_dim(&self) -> usize {
        self.cards.len() * self.f + self.q
    }

    fn codebook_len(&self) -> usize {
        self.cards.iter().sum::<usize>() * self.f
    }

    fn enc_offset(&self) -> usize {
        self.codebook_len()
    }

    fn enc_bias_offset(&self) -> usize {
        self.enc_offset() + self.q * self.d
    }

    fn dec_offset(&self) -> usize {
        self.enc_bias_offset() + self.q
    }

    fn dec_bias_offset(&self) -> usize {
        self.dec_offset() + self.d * self.z_dim()
    }

    fn len(&self) -> usize {
        self.dec_bias_offset() + self.d
    }

    /// Offset of codebook entry (attribute position, class, coordinate).
    fn code_index(&self, pos: usize, class: usize, j: usize) -> usize {
        (self.onehot_offsets[pos] + class) * self.f + j
    }
}

/// Second moments of u = [one-hot (disentangled); x; 1].
#[derive(Debug, Clone)]
struct Moments {
    s: Matrix,
}

impl Moments {
    fn compute(layout: &AeLayout, disentangled: &[usize], features: &Matrix, labels: &[Vec<usize>]) -> Self {
        let n = features.rows;
        let du = layout.u_dim();
        let sum = chunked_sum(n, du * du, |range, acc| {
            let mut nz: Vec<(usize, f64)> = Vec::with_capacity(disentangled.len() + layout.d + 1);
            for i in range {
                nz.clear();
                for (pos, &a) in disentangled.iter().enumerate() {
                    nz.push((layout.onehot_offsets[pos] + labels[a][i], 1.0));
                }
                for (j, &v) in features.row(i).iter().enumerate() {
                    nz.push((layout.x_offset + j, v));
                }
                nz.push((layout.const_index, 1.0));
                for &(p, vp) in &nz {
                    let row = &mut acc[p * du..(p + 1) * du];
                    for &(r, vr) in &nz {
                        row[r] += vp * vr;
                    }
                }
            }
        });
        let inv = if n > 0 { 1.0 / n as f64 } else { 0.0 };
        Moments {
            s: Matrix {
                rows: du,
                cols: du,
                data: sum.into_iter().map(|v| v * inv).collect(),
            },
        }
    }
}

struct AeEval {
    mse: f64,
    overlap: f64,
    grad: Option<Vec<f64>>,
}

const VAR_EPS: f64 = 1e-12;

fn ae_eval(layout: &AeLayout, params: &[f64], m: &Moments, beta: f64, want_grad: bool) -> AeEval {
    let (d, f, q) = (layout.d, layout.f, layout.q);
    let (du, dz) = (layout.u_dim(), layout.z_dim());
    let s = &m.s;

    // Z maps u to the code vector z.
    let mut z = Matrix::zeros(dz, du);
    for (pos, &k) in layout.cards.iter().enumerate() {
        for v in 0..k {
            for j in 0..f {
                z.set(pos * f + j, layout.onehot_offsets[pos] + v, params[layout.code_index(pos, v, j)]);
            }
        }
    }
    let rbase = layout.cards.len() * f;
    for r in 0..q {
        for c in 0..d {
            z.set(rbase + r, layout.x_offset + c, params[layout.enc_offset() + r * d + c]);
        }
        z.set(rbase + r, layout.const_index, params[layout.enc_bias_offset() + r]);
    }
    let g = Matrix {
        rows: d,
        cols: dz,
        data: params[layout.dec_offset()..layout.dec_bias_offset()].to_vec(),
    };
    let gb = &params[layout.dec_bias_offset()..];

    // A = G Z + [0, −I, b_G], so that A u = x̂ − x.
    let mut a = g.matmul(&z);
    for i in 0..d {
        let row = a.row_mut(i);
        row[layout.x_offset + i] -= 1.0;
        row[layout.const_index] += gb[i];
    }
    let as_ = a.matmul(s);
    let mse = (0..d).map(|i| dot(a.row(i), as_.row(i))).sum::<f64>() / d as f64;

    // Overlap penalty from the centered moments.
    let mu: Vec<f64> = (0..d).map(|j| s.get(layout.x_offset + j, layout.const_index)).collect();
    let mut cov = Matrix::from_fn(d, d, |i, j| s.get(layout.x_offset + i, layout.x_offset + j) - mu[i] * mu[j]);
    // symmetrize away rounding
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov.get(i, j) + cov.get(j, i));
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let mut indicators: Vec<(Vec<f64>, f64)> = Vec::new();
    for (pos, &k) in layout.cards.iter().enumerate() {
        for v in 0..k {
            let idx = layout.onehot_offsets[pos] + v;
            let p = s.get(idx, layout.const_index);
            let var = p * (1.0 - p);
            if var > 1e-12 {
                let cross: Vec<f64> = (0..d).map(|j| s.get(layout.x_offset + j, idx) - mu[j] * p).collect();
                indicators.push((cross, var));
            }
        }
    }
    let pairs = (q * indicators.len()).max(1) as f64;
    let mut overlap = 0.0;
    let mut enc_pen_grad = vec![0.0; q * d];
    if beta != 0.0 || !want_grad {
        for r in 0..q {
            let w = &params[layout.enc_offset() + r * d..layout.enc_offset() + (r + 1) * d];
            let cw = cov.matvec(w);
            let vj = dot(w, &cw) + VAR_EPS;
            let gr = &mut enc_pen_grad[r * d..(r + 1) * d];
            for (cross, var) in &indicators {
                let c = dot(w, cross);
                overlap += c * c / (vj * var);
                if want_grad {
                    axpy(2.0 * c / (vj * var) / pairs, cross, gr);
                    axpy(-2.0 * c * c / (vj * vj * var) / pairs, &cw, gr);
                }
            }
        }
        overlap /= pairs;
    }

    let grad = want_grad.then(|| {
        let mut grad = vec![0.0; layout.len()];
        // dMSE/dA = (2/d) A S
        let scale = 2.0 / d as f64;
        let da = Matrix {
            rows: d,
            cols: du,
            data: as_.data.iter().map(|v| v * scale).collect(),
        };
        let dg = da.matmul(&z.transpose());
        grad[layout.dec_offset()..layout.dec_bias_offset()].copy_from_slice(&dg.data);
        for i in 0..d {
            grad[layout.dec_bias_offset() + i] = da.get(i, layout.const_index);
        }
        let dz_ = g.transpose().matmul(&da);
        for (pos, &k) in layout.cards.iter().enumerate() {
            for v in 0..k {
                for j in 0..f {
                    grad[layout.code_index(pos, v, j)] = dz_.get(pos * f + j, layout.onehot_offsets[pos] + v);
                }
            }
        }
        for r in 0..q {
            for c in 0..d {
                grad[layout.enc_offset() + r * d + c] =
                    dz_.get(rbase + r, layout.x_offset + c) + beta * enc_pen_grad[r * d + c];
            }
            grad[layout.enc_bias_offset() + r] = dz_.get(rbase + r, layout.const_index);
        }
        grad
    });

    AeEval { mse, overlap, grad }
}

#[derive(Clone, Copy)]
enum AeBlock {
    CodesAndDecoder,
    Encoder,
}

/// Cholesky factor of the ridged second moment of `[x; 1]`. Residual
/// encoder rows act on `[x; 1]`, so this matrix sets the curvature of
/// both loss terms along them.
fn encoder_preconditioner(layout: &AeLayout, m: &Moments) -> Matrix {
    let n = layout.d + 1;
    let base = layout.x_offset;
    let mut s = Matrix::from_fn(n, n, |i, j| m.s.get(base + i, base + j));
    let ridge = 1e-6 * (0..n).map(|i| s.get(i, i)).sum::<f64>() / n as f64 + 1e-12;
    for i in 0..n {
        s.set(i, i, s.get(i, i) + ridge);
    }
    cholesky(&s).expect("ridged second moment is positive definite")
}

/// Encoder part of the gradient with each row `[W_r, b_r]` multiplied by
/// the inverse second moment.
fn precondition_encoder(layout: &AeLayout, chol: &Matrix, grad: &[f64]) -> Vec<f64> {
    let (d, q) = (layout.d, layout.q);
    let mut out = vec![0.0; q * (d + 1)];
    for r in 0..q {
        let mut g = grad[layout.enc_offset() + r * d..layout.enc_offset() + (r + 1) * d].to_vec();
        g.push(grad[layout.enc_bias_offset() + r]);
        let p = cholesky_solve(chol, &g);
        out[r * d..(r + 1) * d].copy_from_slice(&p[..d]);
        out[q * d + r] = p[d];
    }
    out
}

/// True when the sample belongs to the validation split.
pub fn is_validation(id: u64, seed: u64, fraction: f64) -> bool {
    let h = splitmix64(id ^ derive_seed(seed, &[Purpose::Split as u64]));
    (h % 1_000_000) as f64 / 1_000_000.0 < fraction
}

fn feature_matrix(ds: &Dataset) -> Matrix {
    let d = ds.feature_dim();
    let mut data = Vec::with_capacity(ds.len() * d);
    for s in ds.samples() {
        data.extend_from_slice(&s.features);
    }
    Matrix {
        rows: ds.len(),
        cols: d,
        data,
    }
}

fn label_columns(ds: &Dataset) -> Vec<Vec<usize>> {
    (0..ds.schema().len()).map(|a| ds.labels_of(a)).collect()
}

fn predicted_columns(classifiers: &[Logistic], feats: &Matrix) -> Vec<Vec<usize>> {
    classifiers
        .par_iter()
        .map(|c| (0..feats.rows).map(|i| c.predict(feats.row(i))).collect())
        .collect()
}

impl FactorModel {
    fn layout(&self) -> AeLayout {
        AeLayout::new(
            &self.schema,
            &self.disentangled,
            self.feature_dim,
            self.hyperparams.factor_dim,
            self.hyperparams.residual_dim,
        )
    }

    fn ae_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().len());
        for cb in &self.codebooks {
            v.extend_from_slice(&cb.data);
        }
        v.extend_from_slice(&self.residual_encoder.data);
        v.extend_from_slice(&self.residual_bias);
        v.extend_from_slice(&self.decoder.data);
        v.extend_from_slice(&self.decoder_bias);
        v
    }

    fn set_ae_flat(&mut self, flat: &[f64]) {
        let l = self.layout();
        for (pos, cb) in self.codebooks.iter_mut().enumerate() {
            let start = l.code_index(pos, 0, 0);
            let len = cb.data.len();
            cb.data.copy_from_slice(&flat[start..start + len]);
        }
        self.residual_encoder.data.copy_from_slice(&flat[l.enc_offset()..l.enc_bias_offset()]);
        self.residual_bias.copy_from_slice(&flat[l.enc_bias_offset()..l.dec_offset()]);
        self.decoder.data.copy_from_slice(&flat[l.dec_offset()..l.dec_bias_offset()]);
        self.decoder_bias.copy_from_slice(&flat[l.dec_bias_offset()..]);
    }

    fn initialize(schema: &AttributeSchema, d: usize, hp: &Hyperparams, disentangled: Vec<usize>) -> Self {
        let (f, q) = (hp.factor_dim, hp.residual_dim);
        let classifiers = (0..schema.len())
            .map(|a| Logistic::random(schema.cardinality(a), d, hp.init_scale, hp.seed, a as u64))
            .collect();
        let mut rng = stream(hp.seed, Purpose::Init, 1 << 32);
        let mut gauss = |rows, cols| Matrix::from_fn(rows, cols, |_, _| hp.init_scale * rng.sample::<f64, _>(StandardNormal));
        let codebooks = disentangled.iter().map(|&a| gauss(schema.cardinality(a), f)).collect();
        let residual_encoder = gauss(q, d);
        let decoder = gauss(d, disentangled.len() * f + q);
        FactorModel {
            schema: schema.clone(),
            feature_dim: d,
            disentangled,
            classifiers,
            codebooks,
            residual_encoder,
            residual_bias: vec![0.0; q],
            decoder,
            decoder_bias: vec![0.0; d],
            hyperparams: hp.clone(),
            accuracies: vec![],
            training: None,
        }
    }

    pub fn is_disentangled(&self, attr: usize) -> bool {
        self.disentangled.contains(&attr)
    }

    /// Position of `attr` among the disentangled attributes.
    pub fn code_position(&self, attr: usize) -> Option<usize> {
        self.disentangled.iter().position(|&a| a == attr)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::Dimension {
                context: "model input",
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Runs the classifiers and residual encoder. With `label_override`
    /// (one label per schema attribute) the codes use those classes instead
    /// of the predictions.
    pub fn encode(&self, x: &[f64], label_override: Option<&[usize]>) -> Result<EncodedSample> {
        self.check_dim(x)?;
        if let Some(l) = label_override {
            self.schema.validate_labels(l)?;
        }
        let predicted_labels: Vec<usize> = self.classifiers.iter().map(|c| c.predict(x)).collect();
        let source = label_override.unwrap_or(&predicted_labels);
        let code_labels: Vec<usize> = self.disentangled.iter().map(|&a| source[a]).collect();
        let factor_codes = code_labels
            .iter()
            .enumerate()
            .map(|(pos, &v)| self.codebooks[pos].row(v).to_vec())
            .collect();
        let mut residual_code = self.residual_encoder.matvec(x);
        axpy(1.0, &self.residual_bias, &mut residual_code);
        Ok(EncodedSample {
            predicted_labels,
            code_labels,
            factor_codes,
            residual_code,
        })
    }

    /// Replaces the factor code of a disentangled attribute with the codebook
    /// entry of `class`.
    pub fn set_code(&self, enc: &mut EncodedSample, attr: usize, class: usize) -> Result<()> {
        let pos = self
            .code_position(attr)
            .ok_or_else(|| Error::InvalidArgument(format!("attribute `{}` has no factor code", self.schema.name(attr))))?;
        if class >= self.codebooks[pos].rows {
            return Err(Error::InvalidArgument(format!("class {class} out of range")));
        }
        enc.code_labels[pos] = class;
        enc.factor_codes[pos] = self.codebooks[pos].row(class).to_vec();
        Ok(())
    }

    /// `G · [codes; residual] + b`.
    pub fn decode(&self, enc: &EncodedSample) -> Result<Vec<f64>> {
        let f = self.hyperparams.factor_dim;
        if enc.factor_codes.len() != self.disentangled.len() || enc.factor_codes.iter().any(|c| c.len() != f) {
            return Err(Error::Dimension {
                context: "factor codes",
                expected: self.disentangled.len() * f,
                found: enc.factor_codes.iter().map(Vec::len).sum(),
            });
        }
        if enc.residual_code.len() != self.hyperparams.residual_dim {
            return Err(Error::Dimension {
                context: "residual code",
                expected: self.hyperparams.residual_dim,
                found: enc.residual_code.len(),
            });
        }
        let mut out = self.decoder_bias.clone();
        let mut col = 0;
        for code in enc.factor_codes.iter().chain(std::iter::once(&enc.residual_code)) {
            for &v in code {
                if v != 0.0 {
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += self.decoder.get(i, col) * v;
                    }
                }
                col += 1;
            }
        }
        Ok(out)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode(x, None)?)
    }

    /// Argmax class (lowest index on ties) and softmax probabilities.
    pub fn classify(&self, x: &[f64], attribute: &str) -> Result<(usize, Vec<f64>)> {
        let a = self.schema.index_of(attribute)?;
        self.check_dim(x)?;
        let mut p = self.classifiers[a].logits(x);
        softmax_in_place(&mut p);
        Ok((argmax(&p), p))
    }

    pub fn predict(&self, x: &[f64], attr: usize) -> usize {
        self.classifiers[attr].predict(x)
    }

    /// Loss terms on a dataset: cross-entropy against the true labels,
    /// reconstruction and overlap with predicted-label codes.
    pub fn loss(&self, data: &Dataset) -> Result<LossBreakdown> {
        let feats = feature_matrix(data);
        let labels = label_columns(data);
        Ok(self.loss_on(&feats, &labels))
    }

    fn loss_on(&self, feats: &Matrix, labels: &[Vec<usize>]) -> LossBreakdown {
        let layout = self.layout();
        let predicted = predicted_columns(&self.classifiers, feats);
        let moments = Moments::compute(&layout, &self.disentangled, feats, &predicted);
        let cross_entropy: Vec<f64> =
            self.classifiers.par_iter().enumerate().map(|(a, c)| c.loss(feats, &labels[a])).collect();
        let ae = ae_eval(&layout, &self.ae_flat(), &moments, self.hyperparams.penalty_weight, false);
        let total = cross_entropy.iter().sum::<f64>() + ae.mse + self.hyperparams.penalty_weight * ae.overlap;
        LossBreakdown {
            cross_entropy,
            reconstruction: ae.mse,
            overlap: ae.overlap,
            total,
        }
    }

    /// Analytic gradient of the overlap term alone (scaled by β), in the
    /// residual-encoder parameter layout.
    pub fn overlap_gradient(&self, data: &Dataset) -> Vec<f64> {
        let feats = feature_matrix(data);
        let layout = self.layout();
        let m = Moments::compute(&layout, &self.disentangled, &feats, &predicted_columns(&self.classifiers, &feats));
        let beta = self.hyperparams.penalty_weight;
        let with = ae_eval(&layout, &self.ae_flat(), &m, beta, true).grad.unwrap();
        let without = ae_eval(&layout, &self.ae_flat(), &m, 0.0, true).grad.unwrap();
        with[layout.enc_offset()..layout.enc_bias_offset()]
            .iter()
            .zip(&without[layout.enc_offset()..layout.enc_bias_offset()])
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// Validates the disentangle set and returns it sorted.
fn check_disentangle_set(schema: &AttributeSchema, set: &[usize]) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("disentangle set must be non-empty".into()));
    }
    let mut v = set.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() != set.len() || v.iter().any(|&a| a >= schema.len()) {
        return Err(Error::InvalidArgument("disentangle set must hold distinct schema attributes".into()));
    }
    Ok(v)
}

pub fn train(dataset: &Dataset, hp: &Hyperparams, disentangle_set: &[usize]) -> Result<FactorModel> {
    if dataset.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let schema = dataset.schema();
    let disentangled = check_disentangle_set(schema, disentangle_set)?;
    let train_ds = dataset.filter(|s| !is_validation(s.id, hp.seed, hp.validation_fraction));
    let val_ds = dataset.filter(|s| is_validation(s.id, hp.seed, hp.validation_fraction));
    if train_ds.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let feats = feature_matrix(&train_ds);
    let labels = label_columns(&train_ds);

    let mut model = FactorModel::initialize(schema, dataset.feature_dim(), hp, disentangled);
    let layout = model.layout();
    let beta = hp.penalty_weight;
    let mut halvings = 0u64;

    let mut clf_lr = vec![hp.learning_rate; schema.len()];
    let mut ce: Vec<f64> =
        model.classifiers.par_iter().enumerate().map(|(a, c)| c.loss(&feats, &labels[a])).collect();
    let mut clf_history = vec![ce.iter().sum::<f64>()];
    for epoch in 0..hp.epochs {
        let steps: Vec<(Logistic, f64, f64, u32)> = model
            .classifiers
            .par_iter()
            .zip(clf_lr.par_iter())
            .enumerate()
            .map(|(a, (c, &lr))| {
                let mut c = c.clone();
                let mut lr = lr;
                let (_, step) = c.step(&feats, &labels[a], &mut lr, hp.lr_growth);
                (c, step.loss, lr, step.halvings)
            })
            .collect();
        for (a, (c, loss, lr, h)) in steps.into_iter().enumerate() {
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    term: format!("cross_entropy[{}]", schema.name(a)),
                });
            }
            model.classifiers[a] = c;
            ce[a] = loss;
            clf_lr[a] = lr;
            halvings += h as u64;
        }
        clf_history.push(ce.iter().sum::<f64>());
    }

    let predicted = predicted_columns(&model.classifiers, &feats);
    let moments = Moments::compute(&layout, &model.disentangled, &feats, &predicted);
    let precond = encoder_preconditioner(&layout, &moments);
    let enc_range = layout.enc_offset()..layout.dec_offset();
    let mut dec_lr = hp.learning_rate;
    let mut enc_lr = hp.learning_rate;
    let mut ae_params = model.ae_flat();
    let ae_loss_of = |p: &[f64]| {
        let e = ae_eval(&layout, p, &moments, beta, false);
        e.mse + beta * e.overlap
    };
    let mut ae_loss = ae_loss_of(&ae_params);
    let mut ae_history = vec![ae_loss];
    for epoch in 0..hp.epochs {
        for block in [AeBlock::CodesAndDecoder, AeBlock::Encoder] {
            let cur = ae_eval(&layout, &ae_params, &moments, beta, true);
            if !cur.mse.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    term: "reconstruction".into(),
                });
            }
            if !cur.overlap.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    term: "overlap".into(),
                });
            }
            let mut dir = cur.grad.unwrap();
            let lr = match block {
                AeBlock::CodesAndDecoder => {
                    dir[enc_range.clone()].iter_mut().for_each(|g| *g = 0.0);
                    &mut dec_lr
                }
                AeBlock::Encoder => {
                    let enc = precondition_encoder(&layout, &precond, &dir);
                    dir.iter_mut().for_each(|g| *g = 0.0);
                    dir[enc_range.clone()].copy_from_slice(&enc);
                    &mut enc_lr
                }
            };
            let step = descend(&mut ae_params, &dir, ae_loss, lr, hp.lr_growth, ae_loss_of);
            ae_loss = step.loss;
            halvings += step.halvings as u64;
        }
        ae_history.push(ae_loss);
    }
    model.set_ae_flat(&ae_params);

    let val_feats = feature_matrix(&val_ds);
    let val_labels = label_columns(&val_ds);
    model.accuracies = (0..schema.len())
        .map(|a| AttributeAccuracy {
            attribute: schema.name(a).to_string(),
            train: model.classifiers[a].accuracy(&feats, &labels[a]),
            validation: model.classifiers[a].accuracy(&val_feats, &val_labels[a]),
        })
        .collect();
    let recon_errors: Vec<f64> = val_ds
        .samples()
        .par_iter()
        .map(|s| -> Result<f64> {
            let xh = model.reconstruct(&s.features)?;
            let num: f64 = xh.iter().zip(&s.features).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            Ok(num / dot(&s.features, &s.features).sqrt().max(1e-300))
        })
        .collect::<Result<_>>()?;
    model.training = Some(TrainingLog {
        classifier_loss_history: clf_history,
        autoencoder_loss_history: ae_history,
        halvings,
        final_loss: model.loss_on(&feats, &labels),
        train_samples: train_ds.len(),
        validation_samples: val_ds.len(),
        validation_reconstruction_error: if recon_errors.is_empty() {
            0.0
        } else {
            recon_errors.iter().sum::<f64>() / recon_errors.len() as f64
        },
    });
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
}

/// Denominator floor for relative errors of near-zero gradients.
pub const GRADCHECK_FLOOR: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

/// Compares the analytic gradient of the training loss on `batch` with
/// central differences for 64 random parameters, 16 from each group
/// (classifiers, codebooks, residual encoder, decoder). Each difference is
/// taken on the loss term that owns the parameter.
pub fn gradient_check(model: &FactorModel, batch: &Dataset) -> Result<GradientCheck> {
    if batch.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let feats = feature_matrix(batch);
    let labels = label_columns(batch);
    let layout = model.layout();
    let predicted = predicted_columns(&model.classifiers, &feats);
    let moments = Moments::compute(&layout, &model.disentangled, &feats, &predicted);
    let beta = model.hyperparams.penalty_weight;
    let ae = model.ae_flat();
    let ae_grad = ae_eval(&layout, &ae, &moments, beta, true).grad.unwrap();
    let ae_loss = |p: &[f64]| {
        let e = ae_eval(&layout, p, &moments, beta, false);
        e.mse + beta * e.overlap
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_FLOOR);

    let mut rng = stream(model.hyperparams.seed, Purpose::GradCheck, 0);
    let mut worst: f64 = 0.0;
    let mut checked = 0;

    // classifiers
    let clf_grads: Vec<Vec<f64>> =
        model.classifiers.iter().enumerate().map(|(a, c)| c.loss_and_grad(&feats, &labels[a]).1).collect();
    for _ in 0..16 {
        let a = rng.random_range(0..model.classifiers.len());
        let c = &model.classifiers[a];
        let (k, d) = (c.classes(), c.dim());
        let flat = c.flatten();
        let i = rng.random_range(0..flat.len());
        let mut up = flat.clone();
        let mut dn = flat;
        up[i] += FD_STEP;
        dn[i] -= FD_STEP;
        let num = (Logistic::from_flat(k, d, &up).loss(&feats, &labels[a]) - Logistic::from_flat(k, d, &dn).loss(&feats, &labels[a]))
            / (2.0 * FD_STEP);
        worst = worst.max(rel(clf_grads[a][i], num));
        checked += 1;
    }

    let groups = [
        (0, layout.enc_offset()),
        (layout.enc_offset(), layout.dec_offset()),
        (layout.dec_offset(), layout.len()),
    ];
    for (lo, hi) in groups {
        for i in sample_indices(&mut rng, hi - lo, 16.min(hi - lo)).into_iter().map(|i| i + lo) {
            let mut up = ae.clone();
            let mut dn = ae.clone();
            up[i] += FD_STEP;
            dn[i] -= FD_STEP;
            let num = (ae_loss(&up) - ae_loss(&dn)) / (2.0 * FD_STEP);
            worst = worst.max(rel(ae_grad[i], num));
            checked += 1;
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        parameters_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{make_world, WorldConfig};

    fn small_world(sigma: f64, leakage: f64) -> Dataset {
        let spec = WorldConfig {
            noise_sigma: sigma,
            residual_leakage: leakage,
            ..WorldConfig::default()
        }
        .build()
        .unwrap();
        make_world(&spec, 600).unwrap()
    }

    fn all(ds: &Dataset) -> Vec<usize> {
        (0..ds.schema().len()).collect()
    }

    #[test]
    fn gradient_check_at_initialization() {
        let ds = small_world(0.05, 0.5);
        let hp = Hyperparams::default();
        let model = FactorModel::initialize(ds.schema(), ds.feature_dim(), &hp, all(&ds));
        let gc = gradient_check(&model, &ds).unwrap();
        assert!(gc.parameters_checked >= 50);
        assert!(gc.max_relative_error < 1e-4, "{gc:?}");
    }

    #[test]
    fn moment_loss_matches_per_sample_loss() {
        let ds = small_world(0.05, 0.5);
        let hp = Hyperparams {
            epochs: 5,
            ..Hyperparams::default()
        };
        let model = train(&ds, &hp, &all(&ds)).unwrap();
        let direct: f64 = ds
            .samples()
            .iter()
            .map(|s| {
                let xh = model.reconstruct(&s.features).unwrap();
                xh.iter().zip(&s.features).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / ds.feature_dim() as f64
            })
            .sum::<f64>()
            / ds.len() as f64;
        let lb = model.loss(&ds).unwrap();
        assert!((direct - lb.reconstruction).abs() < 1e-10 * direct.max(1.0), "{direct} vs {}", lb.reconstruction);
    }

    #[test]
    fn zero_penalty_weight_removes_overlap_gradient() {
        let ds = small_world(0.05, 1.0);
        let hp = Hyperparams {
            penalty_weight: 0.0,
            ..Hyperparams::default()
        };
        let model = FactorModel::initialize(ds.schema(), ds.feature_dim(), &hp, all(&ds));
        assert!(model.overlap_gradient(&ds).iter().all(|&g| g == 0.0));
        let hp = Hyperparams {
            penalty_weight: 1.0,
            ..hp
        };
        let model = FactorModel::initialize(ds.schema(), ds.feature_dim(), &hp, all(&ds));
        assert!(model.overlap_gradient(&ds).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn zero_codes_decode_to_bias() {
        let ds = small_world(0.05, 0.0);
        let model = FactorModel::initialize(ds.schema(), ds.feature_dim(), &Hyperparams::default(), all(&ds));
        let mut enc = model.encode(&ds.samples()[0].features, None).unwrap();
        enc.factor_codes.iter_mut().for_each(|c| c.iter_mut().for_each(|v| *v = 0.0));
        enc.residual_code.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(model.decode(&enc).unwrap(), model.decoder_bias);
    }

    #[test]
    fn label_override_equals_code_swap() {
        let ds = small_world(0.05, 0.0);
        let model = FactorModel::initialize(ds.schema(), ds.feature_dim(), &Hyperparams::default(), all(&ds));
        let s = &ds.samples()[3];
        let mut labels = model.encode(&s.features, None).unwrap().predicted_labels;
        let mut swapped = model.encode(&s.features, None).unwrap();
        labels[2] = (labels[2] + 1) % 4;
        model.set_code(&mut swapped, 2, labels[2]).unwrap();
        let overridden = model.encode(&s.features, Some(&labels)).unwrap();
        assert_eq!(model.decode(&overridden).unwrap(), model.decode(&swapped).unwrap());
    }

    #[test]
    fn classify_errors_and_normalizes() {
        let ds = small_world(0.05, 0.0);
        let model = FactorModel::initialize(ds.schema(), ds.feature_dim(), &Hyperparams::default(), all(&ds));
        assert!(matches!(model.classify(&ds.samples()[0].features, "mood"), Err(Error::UnknownAttribute(_))));
        for s in ds.samples().iter().take(50) {
            let (_, p) = model.classify(&s.features, "glasses").unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(model.encode(&[0.0; 3], None).is_err());
    }

    #[test]
    fn rejects_empty_inputs() {
        let ds = small_world(0.05, 0.0);
        assert!(train(&ds, &Hyperparams::default(), &[]).is_err());
        assert!(train(&ds.filter(|_| false), &Hyperparams::default(), &[0]).is_err());
    }
}
