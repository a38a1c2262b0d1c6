#![allow(dead_code)]

use factorfilter::model::{train, FactorModel, Hyperparams};
use factorfilter::schema::Dataset;
use factorfilter::synthworld::{make_world_from, WorldConfig};

pub fn all_attributes(world: &WorldConfig) -> Vec<usize> {
    (0..world.schema.len()).collect()
}

/// Trains on ids `0..n_train` and returns the model with a disjoint test
/// set of `n_test` samples.
pub fn fit(world: &WorldConfig, hp: &Hyperparams, set: &[usize], n_train: usize, n_test: usize) -> (FactorModel, Dataset) {
    let spec = world.build().unwrap();
    let train_set = make_world_from(&spec, 0, n_train).unwrap();
    let test_set = make_world_from(&spec, n_train as u64, n_test).unwrap();
    (train(&train_set, hp, set).unwrap(), test_set)
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Minimal well-formedness check: one root element, every tag closed in
/// order, attribute quotes balanced.
pub fn well_formed_xml(s: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = s.trim();
    if !rest.starts_with("<svg") {
        return false;
    }
    let mut roots = 0;
    while let Some(start) = rest.find('<') {
        let Some(len) = rest[start..].find('>') else { return false };
        let tag = &rest[start + 1..start + len];
        rest = &rest[start + len + 1..];
        if tag.matches('"').count() % 2 != 0 {
            return false;
        }
        if let Some(name) = tag.strip_prefix('/') {
            if stack.pop().as_deref() != Some(name.trim()) {
                return false;
            }
        } else if !tag.ends_with('/') {
            if stack.is_empty() {
                roots += 1;
            }
            stack.push(tag.split_whitespace().next().unwrap_or("").to_string());
        } else if stack.is_empty() {
            roots += 1;
        }
    }
    stack.is_empty() && roots == 1 && rest.trim().is_empty()
}
