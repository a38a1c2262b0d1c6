mod common;

use common::{all_attributes, fit, well_formed_xml};
use factorfilter::eval::{
    accuracy_matrix, build_report, digest_json, drop_correlation_study, EvaluationReport, Provenance, ReportParts,
    UnseenAttributeResult,
};
use factorfilter::filter::{FilterMode, ResidualMode};
use factorfilter::model::Hyperparams;
use factorfilter::stats::{association_matrix, LabelSource, Metric};
use factorfilter::svg::accuracy_heatmap;
use factorfilter::synthworld::WorldConfig;

fn world(lambda: f64, sigma: f64, eps: f64) -> WorldConfig {
    WorldConfig {
        residual_leakage: lambda,
        noise_sigma: sigma,
        entanglement: eps,
        ..WorldConfig::default()
    }
}

#[test]
fn opt_out_keep_diagonal_grows_with_lambda() {
    // β=0: the model does not fight what the world plants
    let hp = Hyperparams {
        penalty_weight: 0.0,
        ..Hyperparams::default()
    };
    let mut last = 0.0;
    for lambda in [0.0, 0.5, 1.0] {
        let w = world(lambda, 0.3, 0.0);
        let (model, test) = fit(&w, &hp, &all_attributes(&w), 3000, 3000);
        let m = accuracy_matrix(&model, &test, FilterMode::OptOut, ResidualMode::Keep, 3, 0).unwrap();
        assert!(m.mean_diagonal() >= last, "λ={lambda}: {} < {last}", m.mean_diagonal());
        last = m.mean_diagonal();
    }
}

#[test]
fn swap_dominance_trade_off_and_asymmetry() {
    let w = world(0.5, 0.3, 0.3);
    let (model, test) = fit(&w, &Hyperparams::default(), &all_attributes(&w), 3000, 3000);
    let get = |mode, rm| accuracy_matrix(&model, &test, mode, rm, 3, 0).unwrap();
    let out_keep = get(FilterMode::OptOut, ResidualMode::Keep);
    let out_swap = get(FilterMode::OptOut, ResidualMode::SwapWithinBatch);
    let in_keep = get(FilterMode::OptIn, ResidualMode::Keep);
    let in_swap = get(FilterMode::OptIn, ResidualMode::SwapWithinBatch);

    for (s, k) in out_swap.diagonal().iter().zip(out_keep.diagonal()) {
        assert!(s.unwrap() <= k.unwrap() + 0.02, "swap {s:?} keep {k:?}");
    }
    assert!(in_swap.mean_off_diagonal() <= in_keep.mean_off_diagonal());
    assert!(in_keep.mean_off_diagonal() <= out_keep.mean_off_diagonal());
    for m in [&out_keep, &in_swap] {
        for (a, r) in m.random_acc.iter().zip(m.classified_attributes.iter()) {
            let k = model.schema.cardinality(model.schema.index_of(r).unwrap());
            assert_eq!(*a, 1.0 / k as f64);
        }
        assert!(m.rel_acc.iter().flatten().all(|v| v.unwrap() >= 0.0));
    }
}

#[test]
fn leaking_residual_keeps_diagonal_above_chance() {
    let w = world(1.0, 0.05, 0.0);
    let hp = Hyperparams {
        penalty_weight: 0.0,
        ..Hyperparams::default()
    };
    let (model, test) = fit(&w, &hp, &all_attributes(&w), 2000, 2000);
    let m = accuracy_matrix(&model, &test, FilterMode::OptOut, ResidualMode::Keep, 3, 0).unwrap();
    for (c, name) in m.filtered_attributes.iter().enumerate() {
        let row = m.diagonal_row(c).unwrap();
        assert!(m.abs_acc[row][c] > m.random_acc[row], "{name}");
    }
}

#[test]
fn empty_hidden_set_gives_ones() {
    // one coded attribute and a residual wide enough to carry the rest
    let w = world(0.0, 0.05, 0.0);
    let hp = Hyperparams {
        residual_dim: 32,
        ..Hyperparams::default()
    };
    let (model, test) = fit(&w, &hp, &[1], 2000, 1000);
    let m = accuracy_matrix(&model, &test, FilterMode::OptIn, ResidualMode::Keep, 2, 0).unwrap();
    for v in m.rel_acc.iter().flatten() {
        assert!((v.unwrap() - 1.0).abs() <= 0.005, "{v:?}");
    }
}

#[test]
fn independent_world_has_no_drop_relation() {
    let w = world(0.0, 0.8, 0.7);
    let (model, test) = fit(&w, &Hyperparams::default(), &all_attributes(&w), 3000, 5000);
    let assoc = association_matrix(&test, Metric::CramersV, LabelSource::GroundTruth).unwrap();
    for mode in [FilterMode::OptOut, FilterMode::OptIn] {
        let acc = accuracy_matrix(&model, &test, mode, ResidualMode::Keep, 3, 0).unwrap();
        let study = drop_correlation_study(&assoc, &acc).unwrap();
        let s = study.summary.unwrap();
        assert!(s.pearson_r.abs() < 0.5 && s.p_value > 0.01, "{mode:?}: r {} p {}", s.pearson_r, s.p_value);
        assert_eq!(study.points.len(), 30);
    }
}

fn small_report(seed: u64) -> EvaluationReport {
    let w = world(0.3, 0.3, 0.3);
    let (model, test) = fit(&w, &Hyperparams { epochs: 80, ..Hyperparams::default() }, &all_attributes(&w), 1000, 600);
    let mut parts = ReportParts::default();
    for mode in [FilterMode::OptOut, FilterMode::OptIn] {
        for rm in [ResidualMode::Keep, ResidualMode::SwapWithinBatch] {
            parts.matrices.push(accuracy_matrix(&model, &test, mode, rm, 2, seed).unwrap());
        }
    }
    for metric in Metric::ALL {
        parts.correlations.push(association_matrix(&test, metric, LabelSource::GroundTruth).unwrap());
    }
    for metric in Metric::ALL {
        for mode in [FilterMode::OptOut, FilterMode::OptIn] {
            let acc = parts.matrices.iter().find(|m| m.mode == mode && m.residual_mode == ResidualMode::Keep).unwrap();
            parts.studies.push(drop_correlation_study(&parts.correlations[metric as usize], acc).unwrap());
        }
    }
    parts.unseen = Some(UnseenAttributeResult {
        held_out_attribute: "glasses".into(),
        base_acc: 1.0,
        majority_acc: 0.34,
        evaluation_samples: 600,
        rows: vec![],
    });
    let mut provenance = Provenance {
        seeds: Default::default(),
        digests: Default::default(),
    };
    provenance.seeds.insert("eval".into(), seed);
    provenance.digests.insert("model".into(), digest_json(&model));
    parts.provenance = Some(provenance);
    build_report(parts).unwrap()
}

#[test]
fn report_round_trip_digest_and_layout() {
    let report = small_report(0);
    let json = serde_json::to_string(&report).unwrap();
    let back: EvaluationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert_ne!(digest_json(&report), digest_json(&small_report(1)));

    let m = report.matrix(FilterMode::OptOut, ResidualMode::Keep).unwrap();
    let svg = accuracy_heatmap(m);
    assert!(well_formed_xml(&svg));
    // columns are filtered attributes: their labels are rotated along the top
    for name in &m.filtered_attributes {
        assert!(svg.contains(&format!(">{name}</text>")));
    }
    assert!(svg.contains("rotate(-45"));
}

#[test]
fn build_report_names_missing_parts() {
    let err = build_report(ReportParts::default()).unwrap_err();
    assert!(err.to_string().contains("accuracy matrix opt_out/keep"), "{err}");
    let report = small_report(0);
    let parts = ReportParts {
        matrices: report.matrices.clone(),
        correlations: report.correlations.clone(),
        studies: report.studies.clone(),
        unseen: None,
        provenance: Some(report.provenance.clone()),
    };
    assert!(build_report(parts).unwrap_err().to_string().contains("unseen attribute study"));
}
