//! Attribute schemas, labeled datasets and their CSV + JSON on-disk form.
//!
//! A dataset file is a CSV with the columns `id`, one label column per
//! attribute (class index), then `f0..f{d-1}`. The schema lives next to it in
//! `<stem>.schema.json`. Features are written with 17 significant digits so a
//! save/load cycle reproduces every `f64` exactly.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub classes: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, classes: &[&str]) -> Self {
        Attribute {
            name: name.into(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.classes.len()
    }
}

/// Ordered categorical attributes. Class indices run `0..cardinality`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    attributes: Vec<Attribute>,
}

impl TryFrom<RawSchema> for AttributeSchema {
    type Error = Error;
    fn try_from(raw: RawSchema) -> Result<Self> {
        AttributeSchema::new(raw.attributes)
    }
}

impl From<AttributeSchema> for RawSchema {
    fn from(s: AttributeSchema) -> Self {
        RawSchema {
            attributes: s.attributes,
        }
    }
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = HashSet::new();
        for attr in &attributes {
            if attr.name.is_empty() {
                return Err(Error::Schema("attribute name must be non-empty".into()));
            }
            if attr.name == "id" || is_feature_column(&attr.name) {
                return Err(Error::Schema(format!(
                    "attribute name `{}` collides with a reserved column",
                    attr.name
                )));
            }
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute `{}`", attr.name)));
            }
            if attr.cardinality() < 2 {
                return Err(Error::Schema(format!(
                    "attribute `{}` has cardinality {} (< 2)",
                    attr.name,
                    attr.cardinality()
                )));
            }
        }
        Ok(AttributeSchema { attributes })
    }

    /// Six face attributes: age 4, gender 2, ethnicity 4, hair color 4,
    /// beard 2, glasses 3. Class names for ethnicity, hair color and glasses
    /// are placeholders.
    pub fn faces() -> Self {
        AttributeSchema::new(vec![
            Attribute::new("age", &["child", "teen", "adult", "elderly"]),
            Attribute::new("gender", &["male", "female"]),
            Attribute::new("ethnicity", &["group_a", "group_b", "group_c", "group_d"]),
            Attribute::new("hair_color", &["black", "blond", "brown", "gray"]),
            Attribute::new("beard", &["no", "yes"]),
            Attribute::new("glasses", &["none", "clear", "dark"]),
        ])
        .expect("built-in schema is valid")
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::cardinality).collect()
    }

    pub fn cardinality(&self, attr: usize) -> usize {
        self.attributes[attr].cardinality()
    }

    pub fn name(&self, attr: usize) -> &str {
        &self.attributes[attr].name
    }

    pub fn names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn validate_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::Dimension {
                context: "label vector",
                expected: self.len(),
                found: labels.len(),
            });
        }
        for (a, &l) in labels.iter().enumerate() {
            if l >= self.cardinality(a) {
                return Err(Error::InvalidArgument(format!(
                    "label {l} out of range for attribute `{}` (k = {})",
                    self.name(a),
                    self.cardinality(a)
                )));
            }
        }
        Ok(())
    }
}

fn is_feature_column(name: &str) -> bool {
    name.strip_prefix('f')
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: u64,
    pub labels: Vec<usize>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: AttributeSchema,
    feature_dim: usize,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(schema: AttributeSchema, feature_dim: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(samples.len());
        for s in &samples {
            schema.validate_labels(&s.labels)?;
            if s.features.len() != feature_dim {
                return Err(Error::Dimension {
                    context: "sample features",
                    expected: feature_dim,
                    found: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("sample {} has non-finite features", s.id)));
            }
            if !ids.insert(s.id) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Dataset {
            schema,
            feature_dim,
            samples,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Column of labels for one attribute.
    pub fn labels_of(&self, attr: usize) -> Vec<usize> {
        self.samples.iter().map(|s| s.labels[attr]).collect()
    }

    /// Keeps the samples for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&LabeledSample) -> bool) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            feature_dim: self.feature_dim,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Same samples with labels replaced, e.g. by classifier predictions.
    pub fn with_labels(&self, labels: Vec<Vec<usize>>) -> Result<Dataset> {
        if labels.len() != self.len() {
            return Err(Error::Dimension {
                context: "relabel",
                expected: self.len(),
                found: labels.len(),
            });
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, l)| LabeledSample {
                id: s.id,
                labels: l,
                features: s.features.clone(),
            })
            .collect();
        Dataset::new(self.schema.clone(), self.feature_dim, samples)
    }

    /// Same samples with features replaced.
    pub fn with_features(&self, features: Vec<Vec<f64>>) -> Result<Dataset> {
        if features.len() != self.len() {
            return Err(Error::Dimension {
                context: "refeature",
                expected: self.len(),
                found: features.len(),
            });
        }
        let dim = features.first().map_or(self.feature_dim, Vec::len);
        let samples = self
            .samples
            .iter()
            .zip(features)
            .map(|(s, f)| LabeledSample {
                id: s.id,
                labels: s.labels.clone(),
                features: f,
            })
            .collect();
        Dataset::new(self.schema.clone(), dim, samples)
    }
}

/// `data.csv` → `data.schema.json`.
pub fn schema_path_for(path: &Path) -> PathBuf {
    path.with_extension("schema.json")
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    feature_dim: usize,
    #[serde(flatten)]
    schema: AttributeSchema,
}

fn format_feature(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend(dataset.schema.names());
    header.extend((0..dataset.feature_dim).map(|j| format!("f{j}")));
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    wtr.write_record(&header).map_err(csv_err)?;
    let mut record = Vec::with_capacity(header.len());
    for s in &dataset.samples {
        record.clear();
        record.push(s.id.to_string());
        record.extend(s.labels.iter().map(|l| l.to_string()));
        record.extend(s.features.iter().map(|&v| format_feature(v)));
        wtr.write_record(&record).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_json(
        &schema_path_for(path),
        &SchemaFile {
            feature_dim: dataset.feature_dim,
            schema: dataset.schema.clone(),
        },
    )?;
    write_atomic(path, &bytes)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let SchemaFile { feature_dim, schema } = read_json(&schema_path_for(path))?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);

    let row_err = |row: usize, column: &str, message: String| Error::Row {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let mut expected = vec!["id".to_string()];
    expected.extend(schema.names());
    expected.extend((0..feature_dim).map(|j| format!("f{j}")));
    let header = rdr.headers().map_err(|e| row_err(0, "header", e.to_string()))?.clone();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(row_err(
            0,
            "header",
            format!("header does not match schema: expected [{}]", expected.join(",")),
        ));
    }

    let m = schema.len();
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        // 1-based data row numbers, header excluded.
        let row = i + 1;
        let rec = rec.map_err(|e| row_err(row, "-", e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(row_err(
                row,
                "-",
                format!("wrong column count: expected {}, found {}", expected.len(), rec.len()),
            ));
        }
        let id: u64 = rec[0]
            .parse()
            .map_err(|_| row_err(row, "id", format!("invalid id `{}`", &rec[0])))?;
        if !ids.insert(id) {
            return Err(row_err(row, "id", format!("duplicate id {id}")));
        }
        let mut labels = Vec::with_capacity(m);
        for a in 0..m {
            let col = schema.name(a);
            let raw = &rec[1 + a];
            let l: usize = raw
                .parse()
                .map_err(|_| row_err(row, col, format!("invalid label `{raw}`")))?;
            if l >= schema.cardinality(a) {
                return Err(row_err(row, col, format!("label out of range, row {row}")));
            }
            labels.push(l);
        }
        let mut features = Vec::with_capacity(feature_dim);
        for j in 0..feature_dim {
            let raw = &rec[1 + m + j];
            let v: f64 = raw
                .parse()
                .map_err(|_| row_err(row, &expected[1 + m + j], format!("non-numeric feature `{raw}`")))?;
            if !v.is_finite() {
                return Err(row_err(row, &expected[1 + m + j], "non-finite feature".into()));
            }
            features.push(v);
        }
        samples.push(LabeledSample { id, labels, features });
    }
    Dataset::new(schema, feature_dim, samples)
}
