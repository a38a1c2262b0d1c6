//! Categorical association and linear correlation statistics.
//!
//! All estimators are empirical plug-ins. Entropies are in bits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Dataset;
use crate::special::student_t_two_tailed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// `counts[i][j]` = number of positions with x = i and y = j.
    pub counts: Vec<Vec<u64>>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub n: u64,
}

impl ContingencyTable {
    /// Builds a table from raw counts; labels default to class indices.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        let r = counts.first().map_or(0, Vec::len);
        if k < 2 || r < 2 {
            return Err(Error::InvalidArgument(format!("contingency table must be at least 2x2, got {k}x{r}")));
        }
        if counts.iter().any(|row| row.len() != r) {
            return Err(Error::InvalidArgument("ragged contingency table".into()));
        }
        let n = counts.iter().flatten().sum();
        Ok(ContingencyTable {
            row_labels: (0..k).map(|i| i.to_string()).collect(),
            col_labels: (0..r).map(|j| j.to_string()).collect(),
            counts,
            n,
        })
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    pub fn cols(&self) -> usize {
        self.counts[0].len()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn transpose(&self) -> ContingencyTable {
        ContingencyTable {
            counts: (0..self.cols()).map(|j| self.counts.iter().map(|r| r[j]).collect()).collect(),
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            n: self.n,
        }
    }
}

pub fn contingency(xs: &[usize], ys: &[usize], kx: usize, ky: usize) -> Result<ContingencyTable> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            context: "contingency inputs",
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let mut counts = vec![vec![0u64; ky]; kx];
    for (pos, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        if x >= kx || y >= ky {
            return Err(Error::InvalidArgument(format!(
                "label out of range at position {pos}: ({x}, {y}) for a {kx}x{ky} table"
            )));
        }
        counts[x][y] += 1;
    }
    ContingencyTable::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquared {
    pub statistic: f64,
    /// Rows and columns left after dropping zero marginals.
    pub rows: usize,
    pub cols: usize,
    /// Set when at least one all-zero row or column was dropped.
    pub dropped_zero_marginals: bool,
}

/// Pearson's chi-squared statistic, Σ (O − E)² / E with E = row·col / n.
/// Rows or columns whose marginal is zero are dropped first and flagged.
pub fn chi_squared(table: &ContingencyTable) -> Result<ChiSquared> {
    if table.n == 0 {
        return Err(Error::InvalidArgument("chi-squared of an empty table".into()));
    }
    let rs = table.row_sums();
    let cs = table.col_sums();
    let rows: Vec<usize> = (0..rs.len()).filter(|&i| rs[i] > 0).collect();
    let cols: Vec<usize> = (0..cs.len()).filter(|&j| cs[j] > 0).collect();
    let n = table.n as f64;
    let mut stat = 0.0;
    for &i in &rows {
        for &j in &cols {
            let e = rs[i] as f64 * cs[j] as f64 / n;
            let d = table.counts[i][j] as f64 - e;
            stat += d * d / e;
        }
    }
    Ok(ChiSquared {
        statistic: stat,
        rows: rows.len(),
        cols: cols.len(),
        dropped_zero_marginals: rows.len() < rs.len() || cols.len() < cs.len(),
    })
}

/// Cramér's V = sqrt((χ²/n) / min(k − 1, r − 1)), clamped to [0, 1].
///
/// `k` and `r` count only the rows and columns that survive zero-marginal
/// dropping; a table that collapses to a single row or column has V = 0.
/// Perfect association (each line of the longer side has one nonzero cell)
/// returns exactly 1.
pub fn cramers_v(table: &ContingencyTable) -> Result<f64> {
    let chi = chi_squared(table)?;
    let df_min = chi.rows.min(chi.cols).saturating_sub(1);
    if df_min == 0 {
        return Ok(0.0);
    }
    let nonzero_in_col = |j: usize| table.counts.iter().filter(|r| r[j] > 0).count();
    let nonzero_in_row = |i: usize| table.counts[i].iter().filter(|&&c| c > 0).count();
    let perfect = if chi.rows <= chi.cols {
        (0..table.cols()).all(|j| nonzero_in_col(j) <= 1)
    } else {
        (0..table.rows()).all(|i| nonzero_in_row(i) <= 1)
    };
    if perfect {
        return Ok(1.0);
    }
    let v = (chi.statistic / table.n as f64 / df_min as f64).sqrt();
    Ok(v.clamp(0.0, 1.0))
}

/// Cramér's V of a joint probability table (population value, no sampling).
/// Zero-probability rows and columns are ignored.
pub fn population_cramers_v(joint: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..joint.first().map_or(0, |r| r.len())).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut phi2 = 0.0;
    for (i, r) in joint.iter().enumerate() {
        for (j, &p) in r.iter().enumerate() {
            let e = rows[i] * cols[j];
            if e > 0.0 {
                phi2 += (p - e) * (p - e) / e;
            }
        }
    }
    let live = |v: &[f64]| v.iter().filter(|&&x| x > 0.0).count();
    let df_min = live(&rows).min(live(&cols)).saturating_sub(1);
    if df_min == 0 {
        0.0
    } else {
        (phi2 / df_min as f64).sqrt().clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CramerCategory {
    None,
    Small,
    Medium,
    Large,
}

/// Small / medium / large thresholds indexed by `df_min - 1`.
pub const CRAMER_THRESHOLDS: [[f64; 3]; 5] = [
    [0.10, 0.30, 0.50],
    [0.07, 0.21, 0.35],
    [0.06, 0.17, 0.29],
    [0.05, 0.15, 0.25],
    [0.04, 0.13, 0.22],
];

/// Effect-size category of a Cramér's V value for the smaller of the two
/// attributes' degrees of freedom. Thresholds are inclusive lower bounds.
pub fn categorize_cramers_v(v: f64, df_min: usize) -> Result<CramerCategory> {
    if !(1..=5).contains(&df_min) {
        return Err(Error::InvalidArgument(format!("df_min must be in 1..=5, got {df_min}")));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("Cramér's V must be in [0, 1], got {v}")));
    }
    let [small, medium, large] = CRAMER_THRESHOLDS[df_min - 1];
    Ok(if v >= large {
        CramerCategory::Large
    } else if v >= medium {
        CramerCategory::Medium
    } else if v >= small {
        CramerCategory::Small
    } else {
        CramerCategory::None
    })
}

/// Shannon entropy in bits, with 0·log 0 = 0.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some(bad) = p.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("probability entry {bad} is invalid")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>()
}

fn normalized(counts: &[u64], n: f64) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / n).collect()
}

/// I(X;Y) in bits, X = rows.
pub fn mutual_information(table: &ContingencyTable) -> Result<f64> {
    if table.n == 0 {
        return Err(Error::InvalidArgument("mutual information of an empty table".into()));
    }
    let n = table.n as f64;
    let px = normalized(&table.row_sums(), n);
    let py = normalized(&table.col_sums(), n);
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * (pxy / (px[i] * py[j])).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyCoefficient {
    pub value: f64,
    /// X is constant (H(X) = 0); value is 1 by convention.
    pub degenerate: bool,
}

/// Theil's U(X|Y) = I(X;Y) / H(X), X = rows.
pub fn uncertainty_coefficient(table: &ContingencyTable) -> Result<UncertaintyCoefficient> {
    if table.n == 0 {
        return Err(Error::InvalidArgument("uncertainty coefficient of an empty table".into()));
    }
    let hx = entropy_unchecked(&normalized(&table.row_sums(), table.n as f64));
    if hx <= 0.0 {
        return Ok(UncertaintyCoefficient {
            value: 1.0,
            degenerate: true,
        });
    }
    let mi = mutual_information(table)?;
    Ok(UncertaintyCoefficient {
        value: (mi / hx).clamp(0.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CramersV,
    UncertaintyCoefficient,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::CramersV, Metric::UncertaintyCoefficient];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::CramersV => "cramers_v",
            Metric::UncertaintyCoefficient => "uncertainty_coefficient",
        }
    }
}

/// Where the labels behind an association matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    GroundTruth,
    Predictions,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::GroundTruth => "ground_truth",
            LabelSource::Predictions => "predictions",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub metric: Metric,
    pub source: LabelSource,
    pub attributes: Vec<String>,
    /// For the uncertainty coefficient, `values[i][j]` = U(i | j).
    pub values: Vec<Vec<f64>>,
    pub degrees_of_freedom: Vec<usize>,
    /// Pairs where zero marginals were dropped or X was constant.
    pub flagged_pairs: Vec<(usize, usize)>,
}

impl AssociationMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row][col]
    }
}

pub fn association_matrix(dataset: &Dataset, metric: Metric, source: LabelSource) -> Result<AssociationMatrix> {
    let schema = dataset.schema();
    let m = schema.len();
    if m < 2 {
        return Err(Error::InvalidArgument("association matrix needs at least 2 attributes".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("association matrix of an empty dataset".into()));
    }
    let columns: Vec<Vec<usize>> = (0..m).map(|a| dataset.labels_of(a)).collect();
    let cards = schema.cardinalities();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let cells: Vec<(f64, bool)> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<(f64, bool)> {
            let table = contingency(&columns[i], &columns[j], cards[i], cards[j])?;
            match metric {
                Metric::CramersV if i == j => Ok((1.0, false)),
                Metric::CramersV => {
                    let chi = chi_squared(&table)?;
                    Ok((cramers_v(&table)?, chi.dropped_zero_marginals))
                }
                Metric::UncertaintyCoefficient => {
                    let u = uncertainty_coefficient(&table)?;
                    Ok((if i == j { 1.0 } else { u.value }, u.degenerate))
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut values = vec![vec![0.0; m]; m];
    let mut flagged_pairs = Vec::new();
    for (&(i, j), &(v, flag)) in pairs.iter().zip(&cells) {
        values[i][j] = v;
        if flag {
            flagged_pairs.push((i, j));
        }
    }
    Ok(AssociationMatrix {
        metric,
        source,
        attributes: schema.names(),
        values,
        degrees_of_freedom: cards.iter().map(|k| k - 1).collect(),
        flagged_pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub pearson_r: f64,
    /// Two-tailed p-value of r under the null of no correlation.
    pub p_value: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n_points: usize,
}

/// Pearson correlation, least-squares line and two-tailed p-value from
/// t = r·sqrt((n − 2)/(1 − r²)) with n − 2 degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<RegressionSummary> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            context: "pearson inputs",
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::InvalidArgument("zero variance: correlation undefined".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let dof = nf - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        student_t_two_tailed(r * (dof / (1.0 - r * r)).sqrt(), dof)
    };
    let slope = sxy / sxx;
    Ok(RegressionSummary {
        pearson_r: r,
        p_value: p,
        slope,
        intercept: my - slope * mx,
        n_points: n,
    })
}
