//! Controllable synthetic world with correlated categorical attributes.
//!
//! Labels are drawn ancestrally from tabular conditionals (at most two
//! parents per attribute). Features are rendered as
//! `x = Σ_a E_a[label_a] + B·r + η` where `r = λ·m(labels) + (1 − λ)·u`,
//! `u ~ N(0, I)` and `η ~ N(0, σ²I)`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, norm, project_out, Matrix};
use crate::rng::{derive_seed, stream, Purpose};
use crate::schema::{AttributeSchema, Dataset, LabeledSample};
use crate::stats::population_cramers_v;

/// P(attribute | parents). Rows are indexed by the parents' joint
/// configuration in mixed radix, first parent most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub parents: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

impl ConditionalTable {
    pub fn uniform(k: usize) -> Self {
        ConditionalTable {
            parents: vec![],
            probs: vec![vec![1.0 / k as f64; k]],
        }
    }

    pub fn root(probs: Vec<f64>) -> Self {
        ConditionalTable {
            parents: vec![],
            probs: vec![probs],
        }
    }

    /// Child agrees with the parent's class (`v mod k`) with probability
    /// `p_agree`, otherwise is uniform over the remaining classes.
    pub fn agreement(parent: usize, parent_k: usize, k: usize, p_agree: f64) -> Self {
        let probs = (0..parent_k)
            .map(|pv| {
                let target = pv % k;
                (0..k)
                    .map(|v| if v == target { p_agree } else { (1.0 - p_agree) / (k - 1) as f64 })
                    .collect()
            })
            .collect();
        ConditionalTable {
            parents: vec![parent],
            probs,
        }
    }

    /// Builds a table from unnormalized weights for every parent configuration.
    pub fn from_weights(parents: Vec<usize>, parent_ks: &[usize], k: usize, weights: impl Fn(&[usize]) -> Vec<f64>) -> Self {
        let configs: usize = parent_ks.iter().product();
        let mut probs = Vec::with_capacity(configs);
        let mut pv = vec![0; parent_ks.len()];
        for c in 0..configs {
            let mut rem = c;
            for i in (0..parent_ks.len()).rev() {
                pv[i] = rem % parent_ks[i];
                rem /= parent_ks[i];
            }
            let w = weights(&pv);
            assert_eq!(w.len(), k);
            let total: f64 = w.iter().sum();
            probs.push(w.iter().map(|x| x / total).collect());
        }
        ConditionalTable { parents, probs }
    }

    fn row_index(&self, labels: &[usize], cards: &[usize]) -> usize {
        self.parents.iter().fold(0, |acc, &p| acc * cards[p] + labels[p])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencySpec {
    /// Sampling order; parents precede children.
    pub order: Vec<usize>,
    /// One table per attribute, indexed by attribute.
    pub tables: Vec<ConditionalTable>,
}

impl DependencySpec {
    pub fn independent_uniform(schema: &AttributeSchema) -> Self {
        DependencySpec {
            order: (0..schema.len()).collect(),
            tables: schema.cardinalities().into_iter().map(ConditionalTable::uniform).collect(),
        }
    }

    /// Dependencies for the six-attribute face schema: age depends on
    /// gender, hair color on ethnicity and age, beard on gender, glasses on
    /// age. Strengths are chosen to give a spread of Cramér's V values.
    pub fn faces() -> Self {
        let (age, gender, ethnicity, hair, beard, glasses) = (0, 1, 2, 3, 4, 5);
        let tables = vec![
            ConditionalTable::from_weights(vec![gender], &[2], 4, |p| {
                if p[0] == 0 {
                    vec![0.15, 0.15, 0.45, 0.25]
                } else {
                    vec![0.25, 0.25, 0.38, 0.12]
                }
            }),
            ConditionalTable::root(vec![0.5, 0.5]),
            ConditionalTable::root(vec![0.4, 0.2, 0.25, 0.15]),
            ConditionalTable::from_weights(vec![ethnicity, age], &[4, 4], 4, |p| {
                let mut w = vec![1.0, 1.0, 1.0, 1.0];
                // ethnicity shifts black/blond, age shifts toward gray
                w[[0, 1, 2, 0][p[0]]] += 2.0;
                if p[1] == 3 {
                    w[3] += 3.0;
                } else if p[1] == 0 {
                    w[1] += 1.0;
                }
                w
            }),
            ConditionalTable::from_weights(vec![gender], &[2], 2, |p| if p[0] == 0 { vec![0.45, 0.55] } else { vec![0.88, 0.12] }),
            ConditionalTable::from_weights(vec![age], &[4], 3, |p| match p[0] {
                0 => vec![0.9, 0.08, 0.02],
                1 => vec![0.75, 0.15, 0.1],
                2 => vec![0.6, 0.25, 0.15],
                _ => vec![0.3, 0.55, 0.15],
            }),
        ];
        DependencySpec {
            order: vec![gender, age, ethnicity, hair, beard, glasses],
            tables,
        }
    }

    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        let m = schema.len();
        let cards = schema.cardinalities();
        if self.tables.len() != m {
            return Err(Error::Dimension {
                context: "dependency tables",
                expected: m,
                found: self.tables.len(),
            });
        }
        let mut pos = vec![usize::MAX; m];
        for (i, &a) in self.order.iter().enumerate() {
            if a >= m || pos[a] != usize::MAX {
                return Err(Error::InvalidArgument("dependency order must be a permutation of attributes".into()));
            }
            pos[a] = i;
        }
        if self.order.len() != m {
            return Err(Error::InvalidArgument("dependency order must be a permutation of attributes".into()));
        }
        for (a, t) in self.tables.iter().enumerate() {
            let name = schema.name(a);
            if t.parents.len() > 2 {
                return Err(Error::InvalidArgument(format!("`{name}` has more than 2 parents")));
            }
            for &p in &t.parents {
                if p >= m || pos[p] >= pos[a] {
                    return Err(Error::InvalidArgument(format!("`{name}` has a parent that does not precede it")));
                }
            }
            let configs: usize = t.parents.iter().map(|&p| cards[p]).product();
            if t.probs.len() != configs {
                return Err(Error::InvalidArgument(format!(
                    "`{name}` needs {configs} conditional rows, has {}",
                    t.probs.len()
                )));
            }
            for row in &t.probs {
                if row.len() != cards[a] || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::InvalidArgument(format!("`{name}` has an invalid conditional row")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("`{name}` conditional row sums to {s}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub feature_dim: usize,
    /// Per attribute, a `k × d` matrix whose row v is E_a[v].
    pub factor_embeddings: Vec<Matrix>,
    /// `d × q`, orthonormal columns.
    pub residual_basis: Matrix,
    /// Per attribute, a `k × q` matrix of residual means; m(labels) sums the selected rows.
    pub residual_means: Vec<Matrix>,
    pub noise_sigma: f64,
    pub entanglement: f64,
    pub residual_leakage: f64,
}

impl RenderSpec {
    pub fn residual_dim(&self) -> usize {
        self.residual_basis.cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldSpec {
    pub schema: AttributeSchema,
    pub dependency: DependencySpec,
    pub render: RenderSpec,
    pub seed: u64,
}

/// Knobs from which a [`SyntheticWorldSpec`] is constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub schema: AttributeSchema,
    pub dependency: Option<DependencySpec>,
    pub feature_dim: usize,
    pub residual_dim: usize,
    pub noise_sigma: f64,
    pub entanglement: f64,
    pub residual_leakage: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            schema: AttributeSchema::faces(),
            dependency: None,
            feature_dim: 32,
            residual_dim: 8,
            noise_sigma: 0.05,
            entanglement: 0.0,
            residual_leakage: 0.0,
            seed: 0,
        }
    }
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Appends to `basis` an orthonormal basis of span(`vectors`) minus span(`basis`).
fn extend_basis(basis: &mut Vec<Vec<f64>>, vectors: &[Vec<f64>]) {
    for v in vectors {
        let mut w = v.clone();
        project_out(&mut w, basis);
        let nw = norm(&w);
        if nw > 1e-8 {
            basis.push(w.iter().map(|x| x / nw).collect());
        }
    }
}

/// `count` orthonormal vectors orthogonal to `basis`, appended to it.
fn fresh_directions(rng: &mut impl Rng, basis: &mut Vec<Vec<f64>>, d: usize, count: usize) -> Vec<Vec<f64>> {
    let start = basis.len();
    while basis.len() < start + count {
        let g = gaussian_vec(rng, d);
        extend_basis(basis, &[g]);
    }
    basis[start..].to_vec()
}

impl WorldConfig {
    pub fn build(&self) -> Result<SyntheticWorldSpec> {
        let schema = &self.schema;
        let d = self.feature_dim;
        let q = self.residual_dim;
        if !(0.0..=1.0).contains(&self.entanglement) || !(0.0..=1.0).contains(&self.residual_leakage) {
            return Err(Error::InvalidArgument("entanglement and residual_leakage must be in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be finite and >= 0".into()));
        }
        let cards = schema.cardinalities();
        let attr_dims: usize = cards.iter().map(|k| k - 1).sum();
        let shared_dim = if self.entanglement > 0.0 {
            cards.iter().map(|k| k - 1).max().unwrap_or(0)
        } else {
            0
        };
        let needed = attr_dims + shared_dim + q;
        if d < needed {
            return Err(Error::InvalidArgument(format!(
                "feature_dim {d} too small: attribute subspaces, shared subspace and residual need {needed}"
            )));
        }

        let mut rng = stream(self.seed, Purpose::Embedding, 0);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut pure = Vec::with_capacity(cards.len());
        for &k in &cards {
            let mut vs: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, d)).collect();
            let mean: Vec<f64> = (0..d).map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / k as f64).collect();
            for v in vs.iter_mut() {
                axpy(-1.0, &mean, v);
                project_out(v, &basis);
                let n = norm(v);
                v.iter_mut().for_each(|x| *x /= n);
            }
            extend_basis(&mut basis, &vs);
            pure.push(vs);
        }

        let shared = fresh_directions(&mut rng, &mut basis, d, shared_dim);
        let eps = self.entanglement;
        let factor_embeddings = pure
            .into_iter()
            .zip(&cards)
            .map(|(vs, &k)| {
                let rows: Vec<Vec<f64>> = if shared_dim == 0 {
                    vs
                } else {
                    let mut coefs: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, shared_dim)).collect();
                    let mean: Vec<f64> =
                        (0..shared_dim).map(|j| coefs.iter().map(|c| c[j]).sum::<f64>() / k as f64).collect();
                    for c in coefs.iter_mut() {
                        axpy(-1.0, &mean, c);
                        let n = norm(c);
                        c.iter_mut().for_each(|x| *x /= n);
                    }
                    vs.iter()
                        .zip(&coefs)
                        .map(|(v, c)| {
                            let mut e: Vec<f64> = v.iter().map(|x| (1.0 - eps).sqrt() * x).collect();
                            for (s, &cj) in shared.iter().zip(c) {
                                axpy(eps.sqrt() * cj, s, &mut e);
                            }
                            e
                        })
                        .collect()
                };
                Matrix::from_rows(&rows)
            })
            .collect();

        let resid = fresh_directions(&mut rng, &mut basis, d, q);
        let residual_basis = Matrix::from_fn(d, q, |i, j| resid[j][i]);

        let mut mean_rng = stream(self.seed, Purpose::ResidualMean, 0);
        let residual_means = cards
            .iter()
            .map(|&k| Matrix::from_fn(k, q, |_, _| mean_rng.sample(StandardNormal)))
            .collect();

        let spec = SyntheticWorldSpec {
            schema: schema.clone(),
            dependency: self.dependency.clone().unwrap_or_else(|| DependencySpec::independent_uniform(schema)),
            render: RenderSpec {
                feature_dim: d,
                factor_embeddings,
                residual_basis,
                residual_means,
                noise_sigma: self.noise_sigma,
                entanglement: self.entanglement,
                residual_leakage: self.residual_leakage,
            },
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        self.dependency.validate(&self.schema)?;
        let r = &self.render;
        let d = r.feature_dim;
        let cards = self.schema.cardinalities();
        if r.factor_embeddings.len() != cards.len() || r.residual_means.len() != cards.len() {
            return Err(Error::Dimension {
                context: "render attribute count",
                expected: cards.len(),
                found: r.factor_embeddings.len(),
            });
        }
        for (a, &k) in cards.iter().enumerate() {
            let e = &r.factor_embeddings[a];
            if e.rows != k || e.cols != d {
                return Err(Error::Dimension {
                    context: "factor embedding",
                    expected: k * d,
                    found: e.rows * e.cols,
                });
            }
            let m = &r.residual_means[a];
            if m.rows != k || m.cols != r.residual_dim() {
                return Err(Error::Dimension {
                    context: "residual means",
                    expected: k * r.residual_dim(),
                    found: m.rows * m.cols,
                });
            }
        }
        if r.residual_basis.rows != d {
            return Err(Error::Dimension {
                context: "residual basis",
                expected: d,
                found: r.residual_basis.rows,
            });
        }
        if !(0.0..=1.0).contains(&r.residual_leakage) || !(0.0..=1.0).contains(&r.entanglement) || r.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("render knobs out of range".into()));
        }
        Ok(())
    }

    /// Largest |⟨E_a[v] − mean_a, E_b[w] − mean_b⟩| over distinct attributes a ≠ b.
    pub fn max_cross_attribute_overlap(&self) -> f64 {
        let centered: Vec<Vec<Vec<f64>>> = self
            .render
            .factor_embeddings
            .iter()
            .map(|e| {
                let mean: Vec<f64> = (0..e.cols).map(|j| (0..e.rows).map(|v| e.get(v, j)).sum::<f64>() / e.rows as f64).collect();
                (0..e.rows)
                    .map(|v| e.row(v).iter().zip(&mean).map(|(x, m)| x - m).collect())
                    .collect()
            })
            .collect();
        let mut worst: f64 = 0.0;
        for a in 0..centered.len() {
            for b in a + 1..centered.len() {
                for u in &centered[a] {
                    for w in &centered[b] {
                        worst = worst.max(crate::linalg::dot(u, w).abs());
                    }
                }
            }
        }
        worst
    }
}

fn sample_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last class with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

const MAX_JOINT_CELLS: usize = 1 << 20;

/// Exact pairwise joint distributions of all attributes, by enumerating the
/// full joint. `None` if the joint has more than 2^20 cells.
pub fn pairwise_joints(spec: &SyntheticWorldSpec) -> Option<Vec<Vec<Vec<Vec<f64>>>>> {
    let cards = spec.schema.cardinalities();
    let m = cards.len();
    let cells = cards.iter().try_fold(1usize, |acc, &k| acc.checked_mul(k))?;
    if cells > MAX_JOINT_CELLS {
        return None;
    }
    let mut pair: Vec<Vec<Vec<Vec<f64>>>> =
        (0..m).map(|a| (0..m).map(|b| vec![vec![0.0; cards[b]]; cards[a]]).collect()).collect();
    let mut labels = vec![0usize; m];
    for c in 0..cells {
        let mut rem = c;
        for a in (0..m).rev() {
            labels[a] = rem % cards[a];
            rem /= cards[a];
        }
        let p: f64 = spec
            .dependency
            .tables
            .iter()
            .enumerate()
            .map(|(a, t)| t.probs[t.row_index(&labels, &cards)][labels[a]])
            .product();
        if p == 0.0 {
            continue;
        }
        for a in 0..m {
            for b in 0..m {
                pair[a][b][labels[a]][labels[b]] += p;
            }
        }
    }
    Some(pair)
}

/// Population Cramér's V for every attribute pair implied by the
/// dependency tables.
pub fn planted_cramers_v(spec: &SyntheticWorldSpec) -> Option<Vec<Vec<f64>>> {
    let joints = pairwise_joints(spec)?;
    Some(joints.iter().map(|row| row.iter().map(|j| population_cramers_v(j)).collect()).collect())
}

/// Ancestral sample for one index of a labels stream.
pub fn sample_one(spec: &SyntheticWorldSpec, rng_stream: u64, index: u64) -> Vec<usize> {
    let cards = spec.schema.cardinalities();
    let mut rng = stream(spec.seed, Purpose::Labels, derive_seed(rng_stream, &[index]));
    let mut labels = vec![0; cards.len()];
    for &a in &spec.dependency.order {
        let t = &spec.dependency.tables[a];
        labels[a] = sample_categorical(&mut rng, &t.probs[t.row_index(&labels, &cards)]);
    }
    labels
}

/// `n` label vectors drawn ancestrally along the dependency order.
pub fn sample_labels(spec: &SyntheticWorldSpec, n: usize, rng_stream: u64) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    Ok((0..n as u64).into_par_iter().map(|i| sample_one(spec, rng_stream, i)).collect())
}

/// Residual coordinates r for the given labels.
pub fn residual_coords(spec: &SyntheticWorldSpec, labels: &[usize], rng_stream: u64) -> Vec<f64> {
    let r = &spec.render;
    let q = r.residual_dim();
    let lam = r.residual_leakage;
    let mut rng = stream(spec.seed, Purpose::Residual, rng_stream);
    let mut coords: Vec<f64> = gaussian_vec(&mut rng, q).into_iter().map(|u| (1.0 - lam) * u).collect();
    if lam > 0.0 {
        for (a, &l) in labels.iter().enumerate() {
            axpy(lam, r.residual_means[a].row(l), &mut coords);
        }
    }
    coords
}

pub fn render_features(spec: &SyntheticWorldSpec, labels: &[usize], rng_stream: u64) -> Result<Vec<f64>> {
    spec.schema.validate_labels(labels)?;
    let r = &spec.render;
    let d = r.feature_dim;
    let mut x = vec![0.0; d];
    for (a, &l) in labels.iter().enumerate() {
        let e = &r.factor_embeddings[a];
        if e.cols != d {
            return Err(Error::Dimension {
                context: "factor embedding",
                expected: d,
                found: e.cols,
            });
        }
        axpy(1.0, e.row(l), &mut x);
    }
    if r.residual_dim() > 0 {
        let coords = residual_coords(spec, labels, rng_stream);
        axpy(1.0, &r.residual_basis.matvec(&coords), &mut x);
    }
    if r.noise_sigma > 0.0 {
        let mut rng = stream(spec.seed, Purpose::Noise, rng_stream);
        for xi in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *xi += r.noise_sigma * z;
        }
    }
    Ok(x)
}

/// Samples and renders `n` samples with ids `0..n`.
pub fn make_world(spec: &SyntheticWorldSpec, n: usize) -> Result<Dataset> {
    make_world_from(spec, 0, n)
}

/// Samples and renders ids `first_id..first_id + n`; disjoint ranges give
/// independent samples from the same world.
pub fn make_world_from(spec: &SyntheticWorldSpec, first_id: u64, n: usize) -> Result<Dataset> {
    spec.validate()?;
    let samples = (first_id..first_id + n as u64)
        .into_par_iter()
        .map(|id| {
            let labels = sample_one(spec, 0, id);
            let features = render_features(spec, &labels, id)?;
            Ok(LabeledSample { id, labels, features })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(spec.schema.clone(), spec.render.feature_dim, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Attribute;
    use crate::stats::{contingency, cramers_v};

    fn binary_pair(p_agree: f64) -> WorldConfig {
        let schema = AttributeSchema::new(vec![Attribute::new("a", &["0", "1"]), Attribute::new("b", &["0", "1"])]).unwrap();
        WorldConfig {
            dependency: Some(DependencySpec {
                order: vec![0, 1],
                tables: vec![ConditionalTable::uniform(2), ConditionalTable::agreement(0, 2, 2, p_agree)],
            }),
            schema,
            feature_dim: 8,
            residual_dim: 2,
            ..WorldConfig::default()
        }
    }

    fn measured_v(spec: &SyntheticWorldSpec, n: usize) -> f64 {
        let labels = sample_labels(spec, n, 0).unwrap();
        let a: Vec<usize> = labels.iter().map(|l| l[0]).collect();
        let b: Vec<usize> = labels.iter().map(|l| l[1]).collect();
        cramers_v(&contingency(&a, &b, 2, 2).unwrap()).unwrap()
    }

    #[test]
    fn independent_tables_give_small_v() {
        let spec = binary_pair(0.5).build().unwrap();
        assert!(measured_v(&spec, 100_000) < 0.02);
    }

    #[test]
    fn copy_table_gives_v_one() {
        let spec = binary_pair(1.0).build().unwrap();
        assert_eq!(measured_v(&spec, 1000), 1.0);
    }

    #[test]
    fn planted_agreement_matches_closed_form() {
        // exact joint (0.4, 0.1; 0.1, 0.4): χ²/n = Σ p²/(pa pb) − 1
        let joint = [[0.4, 0.1], [0.1, 0.4]];
        let phi2: f64 = joint.iter().flatten().map(|p| p * p / 0.25).sum::<f64>() - 1.0;
        let oracle = phi2.sqrt();
        assert!((oracle - 0.6).abs() < 1e-12);
        let spec = binary_pair(0.8).build().unwrap();
        assert!((measured_v(&spec, 200_000) - oracle).abs() < 0.01);
    }

    #[test]
    fn planted_v_from_tables_matches_closed_form() {
        let spec = binary_pair(0.8).build().unwrap();
        let v = planted_cramers_v(&spec).unwrap();
        assert!((v[0][1] - 0.6).abs() < 1e-12);
        assert!((v[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn faces_gender_beard_is_medium() {
        let cfg = WorldConfig {
            dependency: Some(DependencySpec::faces()),
            ..WorldConfig::default()
        };
        let spec = cfg.build().unwrap();
        let planted = planted_cramers_v(&spec).unwrap()[1][4];
        let labels = sample_labels(&spec, 100_000, 5).unwrap();
        let g: Vec<usize> = labels.iter().map(|l| l[1]).collect();
        let b: Vec<usize> = labels.iter().map(|l| l[4]).collect();
        let measured = cramers_v(&contingency(&g, &b, 2, 2).unwrap()).unwrap();
        assert!(measured >= 0.30 && measured < 0.50, "{measured}");
        assert!((measured - planted).abs() < 0.01);
    }

    #[test]
    fn root_marginal_within_binomial_bounds() {
        let mut cfg = WorldConfig::default();
        cfg.dependency = Some(DependencySpec::faces());
        let spec = cfg.build().unwrap();
        let n = 100_000;
        let labels = sample_labels(&spec, n, 3).unwrap();
        let probs = &spec.dependency.tables[2].probs[0];
        for (v, &p) in probs.iter().enumerate() {
            let count = labels.iter().filter(|l| l[2] == v).count() as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() <= 3.0 * sd, "class {v}");
        }
    }

    #[test]
    fn orthogonal_at_zero_entanglement() {
        let spec = WorldConfig::default().build().unwrap();
        assert!(spec.max_cross_attribute_overlap() < 1e-9);
        let tangled = WorldConfig {
            entanglement: 0.3,
            ..WorldConfig::default()
        }
        .build()
        .unwrap();
        assert!(tangled.max_cross_attribute_overlap() > 1e-3);
    }

    #[test]
    fn noise_free_residual_free_rendering_is_exact_sum() {
        let cfg = WorldConfig {
            noise_sigma: 0.0,
            residual_dim: 0,
            ..WorldConfig::default()
        };
        let spec = cfg.build().unwrap();
        let labels = vec![3, 1, 0, 2, 1, 2];
        let x = render_features(&spec, &labels, 11).unwrap();
        let mut expected = vec![0.0; spec.render.feature_dim];
        for (a, &l) in labels.iter().enumerate() {
            for (e, v) in expected.iter_mut().zip(spec.render.factor_embeddings[a].row(l)) {
                *e += v;
            }
        }
        assert_eq!(x, expected);
        assert_eq!(x, render_features(&spec, &labels, 11).unwrap());
    }

    #[test]
    fn nearest_embedding_recovers_labels_in_ideal_world() {
        let cfg = WorldConfig {
            noise_sigma: 0.0,
            ..WorldConfig::default()
        };
        let spec = cfg.build().unwrap();
        let ds = make_world(&spec, 1000).unwrap();
        for s in ds.samples() {
            for (a, e) in spec.render.factor_embeddings.iter().enumerate() {
                // project onto the centered subspace via inner products with centered class vectors
                let mean: Vec<f64> = (0..e.cols).map(|j| (0..e.rows).map(|v| e.get(v, j)).sum::<f64>() / e.rows as f64).collect();
                let best = (0..e.rows)
                    .map(|v| {
                        let c: Vec<f64> = e.row(v).iter().zip(&mean).map(|(x, m)| x - m).collect();
                        let proj = crate::linalg::dot(&s.features, &c);
                        // squared distance up to terms constant in v
                        (v, -2.0 * proj + crate::linalg::dot(&c, &c))
                    })
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap()
                    .0;
                assert_eq!(best, s.labels[a]);
            }
        }
    }

    #[test]
    fn world_is_deterministic() {
        let spec = WorldConfig::default().build().unwrap();
        assert_eq!(make_world(&spec, 50).unwrap(), make_world(&spec, 50).unwrap());
        assert_eq!(make_world(&spec, 0).unwrap().len(), 0);
    }

    #[test]
    fn rejects_bad_dependencies() {
        let schema = AttributeSchema::faces();
        let mut dep = DependencySpec::faces();
        dep.order = vec![0, 1, 2, 3, 4, 5]; // age before its parent gender
        assert!(dep.validate(&schema).is_err());
        let mut dep = DependencySpec::faces();
        dep.tables[1].probs[0][0] = 0.6;
        assert!(dep.validate(&schema).is_err());
        assert!(DependencySpec::faces().validate(&schema).is_ok());
    }
}
