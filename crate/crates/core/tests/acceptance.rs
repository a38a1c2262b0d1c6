//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use factorfilter::cli;
use factorfilter::eval::{accuracy_matrix, drop_correlation_study, unseen_attribute_study, DropPoint, UnseenConfig};
use factorfilter::filter::{FilterMode, ResidualMode};
use factorfilter::model::{gradient_check, train, Hyperparams};
use factorfilter::schema::{Attribute, AttributeSchema};
use factorfilter::stats::{
    association_matrix, categorize_cramers_v, chi_squared, contingency, cramers_v, pearson, uncertainty_coefficient,
    ContingencyTable, CramerCategory, LabelSource, Metric,
};
use factorfilter::synthworld::{
    make_world_from, planted_cramers_v, sample_labels, ConditionalTable, DependencySpec, WorldConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn table(counts: &[&[u64]]) -> ContingencyTable {
    ContingencyTable::from_counts(counts.iter().map(|r| r.to_vec()).collect()).unwrap()
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

// Table 1, df 1..=5, columns small / medium / large
const TABLE1: [(usize, [f64; 3]); 5] = [
    (1, [0.10, 0.30, 0.50]),
    (2, [0.07, 0.21, 0.35]),
    (3, [0.06, 0.17, 0.29]),
    (4, [0.05, 0.15, 0.25]),
    (5, [0.04, 0.13, 0.22]),
];

fn criterion_1() -> Outcome {
    use CramerCategory::*;
    let named = [Small, Medium, Large];
    let below = [None, Small, Medium];
    let mut bad = Vec::new();
    for (df, cells) in TABLE1 {
        for (i, &t) in cells.iter().enumerate() {
            let at = categorize_cramers_v(t, df).unwrap();
            let under = categorize_cramers_v(t - 1e-9, df).unwrap();
            if at != named[i] || under != below[i] {
                bad.push(format!("df={df} v={t}: {at:?}/{under:?}"));
            }
        }
    }
    let boundary = categorize_cramers_v(0.10, 1).unwrap();
    outcome(
        bad.is_empty() && boundary == Small,
        format!("15 cells, {} mismatches {bad:?}; v=0.10 df=1 -> {boundary:?}", bad.len()),
    )
}

fn criterion_2() -> Outcome {
    let t = table(&[&[8, 2], &[2, 8]]);
    let chi = chi_squared(&t).unwrap().statistic;
    let v = cramers_v(&t).unwrap();
    let v0 = cramers_v(&table(&[&[5, 5], &[5, 5]])).unwrap();
    let v1 = cramers_v(&table(&[&[5, 0, 0], &[0, 7, 0], &[0, 0, 3]])).unwrap();
    let pass = (chi - 7.2).abs() <= 1e-12 && (v - 0.6).abs() <= 1e-12 && v0 == 0.0 && v1 == 1.0;
    outcome(pass, format!("chi2={chi:.15} V={v:.15} V(independent)={v0} V(diagonal)={v1}"))
}

/// U(X|Y) by summing entropies of the normalized joint, X = rows.
fn entropy_oracle(joint: &[Vec<f64>]) -> f64 {
    let n: f64 = joint.iter().flatten().sum();
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>() / n).collect();
    let py: Vec<f64> = (0..joint[0].len()).map(|j| joint.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let hx: f64 = px.iter().filter(|&&p| p > 0.0).map(|p| -p * p.log2()).sum();
    let mut hx_given_y = 0.0;
    for row in joint {
        for (j, &c) in row.iter().enumerate() {
            let p = c / n;
            if p > 0.0 {
                hx_given_y -= p * (p / py[j]).log2();
            }
        }
    }
    (hx - hx_given_y) / hx
}

fn criterion_3() -> Outcome {
    let u = uncertainty_coefficient(&table(&[&[40, 10], &[10, 40]])).unwrap().value;
    let oracle = entropy_oracle(&[vec![0.4, 0.1], vec![0.1, 0.4]]);
    let u_self = uncertainty_coefficient(&table(&[&[30, 0, 0], &[0, 50, 0], &[0, 0, 20]])).unwrap().value;
    let u_ind = uncertainty_coefficient(&table(&[&[6, 9, 15], &[4, 6, 10]])).unwrap().value;
    let pass = (u - 0.278072).abs() <= 1e-5 && (u - oracle).abs() <= 1e-12 && (u_self - 1.0).abs() <= 1e-9 && u_ind.abs() <= 1e-9;
    outcome(pass, format!("U={u:.6} oracle={oracle:.6} U(X|X)={u_self} U(independent)={u_ind:.2e}"))
}

fn pair_world(k: usize, p_agree: f64) -> WorldConfig {
    let classes: Vec<String> = (0..k).map(|v| format!("c{v}")).collect();
    let classes: Vec<&str> = classes.iter().map(String::as_str).collect();
    let schema = AttributeSchema::new(vec![Attribute::new("x", &classes), Attribute::new("y", &classes)]).unwrap();
    WorldConfig {
        dependency: Some(DependencySpec {
            order: vec![0, 1],
            tables: vec![ConditionalTable::uniform(k), ConditionalTable::agreement(0, k, k, p_agree)],
        }),
        schema,
        ..WorldConfig::default()
    }
}

fn criterion_4() -> Outcome {
    // binary agreement p: V = 2p − 1; k-class agreement p: V = (kp − 1)/(k − 1)
    let cases = [(2, 0.56, 0.12, CramerCategory::Small), (5, 0.32, 0.15, CramerCategory::Medium)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, p, target, want) in cases {
        let spec = pair_world(k, p).build().unwrap();
        let planted = planted_cramers_v(&spec).unwrap()[0][1];
        let labels = sample_labels(&spec, 200_000, 0).unwrap();
        let xs: Vec<usize> = labels.iter().map(|l| l[0]).collect();
        let ys: Vec<usize> = labels.iter().map(|l| l[1]).collect();
        let measured = cramers_v(&contingency(&xs, &ys, k, k).unwrap()).unwrap();
        let category = categorize_cramers_v(target, k - 1).unwrap();
        pass &= (planted - target).abs() <= 1e-9 && (measured - planted).abs() <= 0.01 && category == want;
        parts.push(format!("df={} planted={planted:.4} measured={measured:.4} -> {category:?}", k - 1));
    }
    outcome(pass, parts.join("; "))
}

fn permutation_p(xs: &[f64], ys: &[f64], rounds: usize, rng: &mut ChaCha8Rng) -> f64 {
    let r_obs = pearson(xs, ys).unwrap().pearson_r.abs();
    let mut perm = ys.to_vec();
    let mut hits = 0usize;
    for _ in 0..rounds {
        perm.shuffle(rng);
        if pearson(xs, &perm).unwrap().pearson_r.abs() >= r_obs - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / rounds as f64
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(8..=12);
        let slope: f64 = rng.random_range(-0.8..0.8);
        let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + rng.sample::<f64, _>(StandardNormal)).collect();
        let analytic = pearson(&xs, &ys).unwrap().p_value;
        let oracle = permutation_p(&xs, &ys, 100_000, &mut rng);
        worst = worst.max((analytic - oracle).abs());
    }
    let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap().pearson_r;
    outcome(
        worst <= 0.03 && (r - 0.866025).abs() <= 1e-6,
        format!("max |p - p_perm| = {worst:.4} over 20 datasets; r = {r:.6}"),
    )
}

fn fit_world(world: &WorldConfig, hp: &Hyperparams, n_train: usize, n_eval: usize) -> (factorfilter::model::FactorModel, factorfilter::schema::Dataset) {
    let spec = world.build().unwrap();
    let train_set = make_world_from(&spec, 0, n_train).unwrap();
    let eval_set = make_world_from(&spec, n_train as u64, n_eval).unwrap();
    let all: Vec<usize> = (0..spec.schema.len()).collect();
    (train(&train_set, hp, &all).unwrap(), eval_set)
}

fn criterion_6() -> Outcome {
    let world = WorldConfig {
        noise_sigma: 0.0,
        entanglement: 0.0,
        residual_leakage: 0.0,
        ..WorldConfig::default()
    };
    let n = 10_000;
    let (model, test) = fit_world(&world, &Hyperparams::default(), 5000, n);
    let m = accuracy_matrix(&model, &test, FilterMode::OptOut, ResidualMode::Keep, 1, 0).unwrap();
    let mut pass = true;
    let mut diag = Vec::new();
    for c in 0..m.filtered_attributes.len() {
        let r = m.diagonal_row(c).unwrap();
        let chance = m.random_acc[r];
        let z = (m.abs_acc[r][c] - chance) / binomial_se(chance, n);
        pass &= z.abs() <= 3.0;
        diag.push(format!("{}={:.3}(z={z:+.1})", m.filtered_attributes[c], m.abs_acc[r][c]));
    }
    let mut off_min = f64::INFINITY;
    for c in 0..m.filtered_attributes.len() {
        for r in 0..m.classified_attributes.len() {
            if Some(r) != m.diagonal_row(c) {
                off_min = off_min.min(m.rel_acc[r][c].unwrap_or(0.0));
            }
        }
    }
    pass &= off_min >= 0.98;
    outcome(pass, format!("diagonal {}; min off-diagonal rel = {off_min:.4}", diag.join(" ")))
}

fn criterion_7() -> Outcome {
    let world = WorldConfig {
        residual_leakage: 1.0,
        ..WorldConfig::default()
    };
    let run = |beta: f64| {
        let hp = Hyperparams {
            penalty_weight: beta,
            ..Hyperparams::default()
        };
        let (model, test) = fit_world(&world, &hp, 3000, 3000);
        let keep = accuracy_matrix(&model, &test, FilterMode::OptOut, ResidualMode::Keep, 3, 0).unwrap();
        let swap = accuracy_matrix(&model, &test, FilterMode::OptOut, ResidualMode::SwapWithinBatch, 3, 0).unwrap();
        (keep, swap)
    };
    let (keep, swap) = run(0.0);
    let strict = keep.diagonal().iter().zip(swap.diagonal()).all(|(k, s)| s.unwrap() < k.unwrap());
    let off = swap.mean_off_diagonal() < keep.mean_off_diagonal();
    let fmt = |v: Vec<Option<f64>>| v.iter().map(|x| format!("{:.3}", x.unwrap())).collect::<Vec<_>>().join(",");
    let (k1, s1) = run(1.0);
    println!(
        "  info: beta=1 diagonal keep [{}] swap [{}]; off-diagonal keep {:.3} swap {:.3}",
        fmt(k1.diagonal()),
        fmt(s1.diagonal()),
        k1.mean_off_diagonal(),
        s1.mean_off_diagonal()
    );
    outcome(
        strict && off,
        format!(
            "beta=0 diagonal keep [{}] swap [{}]; off-diagonal keep {:.4} swap {:.4}",
            fmt(keep.diagonal()),
            fmt(swap.diagonal()),
            keep.mean_off_diagonal(),
            swap.mean_off_diagonal()
        ),
    )
}

fn criterion_8() -> Outcome {
    let schema = AttributeSchema::faces();
    let (gender, beard) = (schema.index_of("gender").unwrap(), schema.index_of("beard").unwrap());
    let planted = |q: &DropPoint| {
        (q.filtered == "gender" && q.classified == "beard") || (q.filtered == "beard" && q.classified == "gender")
    };
    let mut pass = true;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let mut dep = DependencySpec::independent_uniform(&schema);
        dep.tables[beard] = ConditionalTable::agreement(gender, 2, 2, 0.74);
        let world = WorldConfig {
            noise_sigma: 0.8,
            entanglement: 0.7,
            seed,
            dependency: Some(dep),
            ..WorldConfig::default()
        };
        let hp = Hyperparams {
            seed,
            ..Hyperparams::default()
        };
        let (model, test) = fit_world(&world, &hp, 5000, 10_000);
        let assoc = association_matrix(&test, Metric::CramersV, LabelSource::GroundTruth).unwrap();
        let mut line = format!("seed {seed}:");
        for mode in [FilterMode::OptOut, FilterMode::OptIn] {
            let acc = accuracy_matrix(&model, &test, mode, ResidualMode::Keep, 5, seed).unwrap();
            let study = drop_correlation_study(&assoc, &acc).unwrap();
            let r = study.summary.map_or(f64::NAN, |s| s.pearson_r);
            let (sign_ok, extreme_ok) = match mode {
                FilterMode::OptOut => {
                    let top = study.points.iter().filter(|q| planted(q)).map(|q| q.accuracy_drop).fold(f64::MIN, f64::max);
                    let other =
                        study.points.iter().filter(|q| !planted(q)).map(|q| q.accuracy_drop).fold(f64::MIN, f64::max);
                    (r > 0.0, top > other)
                }
                FilterMode::OptIn => {
                    let lowest = study.points.iter().filter(|q| planted(q)).all(|q| {
                        study
                            .points
                            .iter()
                            .filter(|o| o.classified == q.classified && !planted(o))
                            .all(|o| q.accuracy_drop < o.accuracy_drop)
                    });
                    (r < 0.0, lowest)
                }
            };
            pass &= sign_ok && extreme_ok;
            line += &format!(" {} r={r:+.3} extreme={extreme_ok}", mode.as_str());
        }
        lines.push(line);
    }
    for l in &lines {
        println!("  {l}");
    }
    outcome(pass, "opt_out r > 0 with planted pair the largest drop; opt_in r < 0 with planted pair the smallest drop for its classified attribute; 5 seeds")
}

fn criterion_9() -> Outcome {
    let world = WorldConfig {
        noise_sigma: 0.5,
        ..WorldConfig::default()
    };
    let cfg = UnseenConfig {
        held_out: "glasses".into(),
        world,
        train_samples: 5000,
        eval_samples: 5000,
        ..UnseenConfig::default()
    };
    let res = unseen_attribute_study(&cfg, 3, 0).unwrap();
    let se = binomial_se(res.majority_acc, res.evaluation_samples);
    let mut pass = true;
    let mut worst_gap: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut strict = true;
    for row in &res.rows {
        match (row.mode, row.residual_mode) {
            (FilterMode::OptOut, ResidualMode::Keep) => {
                worst_gap = worst_gap.max((row.acc_with_factor - row.acc_without_factor).abs());
            }
            (FilterMode::OptIn, ResidualMode::SwapWithinBatch) => {
                strict &= row.acc_with_factor > row.acc_without_factor;
                worst_z = worst_z.max((row.acc_without_factor - res.majority_acc).abs() / se);
            }
            (FilterMode::OptIn, ResidualMode::Keep) => println!(
                "  info: opt_in/keep filtering {}: with {:.3} without {:.3}",
                row.filtered_attribute, row.acc_with_factor, row.acc_without_factor
            ),
            _ => {}
        }
    }
    pass &= worst_gap <= 0.05 && strict && worst_z <= 3.0;
    outcome(
        pass,
        format!(
            "opt_out/keep max gap {worst_gap:.4}; opt_in/swap with > without for all: {strict}; without vs majority {:.3} max z {worst_z:.2}",
            res.majority_acc
        ),
    )
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).map_err(|_| format!("{name:?} missing"))?);
        if x != y {
            return Err(format!("{name:?} differs"));
        }
    }
    if fs::read_dir(b).unwrap().count() != names.len() {
        return Err("file sets differ".into());
    }
    Ok(names.len())
}

fn criterion_10() -> Outcome {
    let spec = WorldConfig {
        noise_sigma: 0.3,
        entanglement: 0.3,
        residual_leakage: 0.5,
        ..WorldConfig::default()
    }
    .build()
    .unwrap();
    let data = make_world_from(&spec, 0, 2000).unwrap();
    let all: Vec<usize> = (0..spec.schema.len()).collect();
    let init = train(&data, &Hyperparams { epochs: 0, ..Hyperparams::default() }, &all).unwrap();
    let trained = train(&data, &Hyperparams::default(), &all).unwrap();
    let gc0 = gradient_check(&init, &data).unwrap().max_relative_error;
    let gc1 = gradient_check(&trained, &data).unwrap().max_relative_error;
    let log = trained.training.as_ref().unwrap();
    let monotone = |h: &[f64]| h.windows(2).all(|w| w[1] <= w[0]);
    let mono = monotone(&log.classifier_loss_history) && monotone(&log.autoencoder_loss_history);

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut codes = Vec::new();
    for (dir, threads) in dirs.iter().zip(["1", "8"]) {
        let args = ["factorfilter", "--threads", threads, "--seed", "3", "--out"];
        let mut argv: Vec<std::ffi::OsString> = args.iter().map(Into::into).collect();
        argv.push(dir.path().into());
        argv.extend(["demo", "--n", "3000"].iter().map(Into::into));
        codes.push(cli::run(argv));
    }
    let same = if codes == [0, 0] {
        same_tree(dirs[0].path(), dirs[1].path())
    } else {
        Err(format!("exit codes {codes:?}"))
    };
    let pass = gc0 < 1e-4 && gc1 < 1e-4 && mono && same.is_ok();
    outcome(
        pass,
        format!("gradcheck init {gc0:.2e} trained {gc1:.2e}; histories monotone: {mono}; demo threads 1 vs 8: {same:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("Table 1 categories", criterion_1, 1),
        ("chi-squared and Cramér's V golden values", criterion_2, 1),
        ("uncertainty coefficient golden values", criterion_3, 1),
        ("planted V categories and Monte Carlo", criterion_4, 10),
        ("Pearson p against permutation oracle", criterion_5, 30),
        ("ideal-world filtering", criterion_6, 60),
        ("residual swap at full leakage", criterion_7, 120),
        ("correlation-drop regression signs", criterion_8, 180),
        ("unseen attribute", criterion_9, 300),
        ("numerical hygiene and thread reproducibility", criterion_10, u64::MAX),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*budget);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = if *budget == u64::MAX { String::new() } else { format!(" (budget {budget} s)") };
        println!(
            "criterion {:>2}: {} {name}: {} [{:.1} s{budget_note}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
