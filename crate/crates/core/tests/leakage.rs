mod common;

use common::{all_attributes, fit};
use factorfilter::eval::majority_accuracy;
use factorfilter::filter::{audit_leakage, probe_accuracy, FilterMode, FilterPolicy, ResidualMode};
use factorfilter::model::Hyperparams;
use factorfilter::synthworld::{sample_labels, residual_coords, WorldConfig};

// β=2 keeps the model from opening a channel of its own at λ=0 while
// leaving the planted one partly in place at λ=1
fn audit(lambda: f64, rm: ResidualMode) -> (f64, f64) {
    let world = WorldConfig {
        residual_leakage: lambda,
        ..WorldConfig::default()
    };
    let hp = Hyperparams {
        penalty_weight: 2.0,
        ..Hyperparams::default()
    };
    let (model, batch) = fit(&world, &hp, &all_attributes(&world), 3000, 4000);
    let glasses = model.schema.index_of("glasses").unwrap();
    let policy = FilterPolicy::new(FilterMode::OptOut, &["glasses"], rm, 3);
    (audit_leakage(&model, &batch, &policy, "glasses").unwrap(), majority_accuracy(&batch)[glasses])
}

#[test]
fn no_leakage_channel_without_residual_leakage() {
    let (acc, majority) = audit(0.0, ResidualMode::Keep);
    assert!(acc <= majority + 0.03, "probe {acc}, majority {majority}");
}

#[test]
fn planted_leakage_is_found_and_swap_reduces_it() {
    let (keep, majority) = audit(1.0, ResidualMode::Keep);
    let (swap, _) = audit(1.0, ResidualMode::SwapWithinBatch);
    assert!(keep > majority + 0.10, "probe {keep}, majority {majority}");
    assert!(swap < keep, "swap {swap}, keep {keep}");
}

#[test]
fn world_residual_leakage_is_monotone_in_lambda() {
    let n = 20_000;
    let mut previous = [0.0; 6];
    let mut first = None;
    for lambda in [0.0, 0.5, 1.0] {
        let spec = WorldConfig {
            residual_leakage: lambda,
            ..WorldConfig::default()
        }
        .build()
        .unwrap();
        let labels = sample_labels(&spec, n, 0).unwrap();
        let ids: Vec<u64> = (0..n as u64).collect();
        let br: Vec<Vec<f64>> = labels
            .iter()
            .zip(&ids)
            .map(|(l, &id)| spec.render.residual_basis.matvec(&residual_coords(&spec, l, id)))
            .collect();
        for a in 0..spec.schema.len() {
            let ys: Vec<usize> = labels.iter().map(|l| l[a]).collect();
            let acc = probe_accuracy(&br, &ids, &ys, spec.schema.cardinality(a), 0).unwrap();
            // one held-out binomial standard error of slack
            assert!(acc >= previous[a] - 0.007, "attribute {a} at λ={lambda}: {acc} < {}", previous[a]);
            previous[a] = acc;
        }
        first.get_or_insert(previous);
    }
    // observed 0.83-0.99 at λ=1
    for (start, end) in first.unwrap().iter().zip(&previous) {
        assert!(end - start > 0.2, "{start} -> {end}");
    }
}
