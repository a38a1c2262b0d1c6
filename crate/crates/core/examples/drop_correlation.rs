// Accuracy drop of one attribute when another is filtered, regressed on
// the association between the two.

use factorfilter::eval::{accuracy_matrix, drop_correlation_study};
use factorfilter::filter::{FilterMode, ResidualMode};
use factorfilter::model::{train, Hyperparams};
use factorfilter::schema::AttributeSchema;
use factorfilter::stats::{association_matrix, LabelSource, Metric};
use factorfilter::synthworld::{make_world_from, ConditionalTable, DependencySpec, WorldConfig};

pub fn run_example() -> factorfilter::Result<()> {
    let schema = AttributeSchema::faces();
    let (gender, beard) = (schema.index_of("gender")?, schema.index_of("beard")?);
    let mut dep = DependencySpec::independent_uniform(&schema);
    dep.tables[beard] = ConditionalTable::agreement(gender, 2, 2, 0.74);
    dep.order = vec![0, 1, 2, 3, 4, 5];
    let spec = WorldConfig {
        schema,
        dependency: Some(dep),
        noise_sigma: 0.8,
        entanglement: 0.7,
        ..WorldConfig::default()
    }
    .build()?;
    let train_set = make_world_from(&spec, 0, 5000)?;
    let test_set = make_world_from(&spec, 5000, 10_000)?;
    let model = train(&train_set, &Hyperparams::default(), &(0..6).collect::<Vec<_>>())?;

    for metric in Metric::ALL {
        let assoc = association_matrix(&test_set, metric, LabelSource::GroundTruth)?;
        for mode in [FilterMode::OptOut, FilterMode::OptIn] {
            let acc = accuracy_matrix(&model, &test_set, mode, ResidualMode::Keep, 5, 0)?;
            let study = drop_correlation_study(&assoc, &acc)?;
            let planted = study
                .points
                .iter()
                .find(|p| p.filtered == "gender" && p.classified == "beard")
                .expect("planted pair");
            match &study.summary {
                Some(s) => print!("{} {}: r = {:.3} (p = {:.2e})", metric.as_str(), mode.as_str(), s.pearson_r, s.p_value),
                None => print!("{} {}: r undefined", metric.as_str(), mode.as_str()),
            }
            let others = study.points.iter().filter(|p| p.classified == "beard" && p.filtered != "gender");
            let mean = others.clone().map(|p| p.accuracy_drop).sum::<f64>() / others.count() as f64;
            println!(", beard drop {:.3} with gender filtered, {mean:.3} on average otherwise", planted.accuracy_drop);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> factorfilter::Result<()> {
    run_example()
}
