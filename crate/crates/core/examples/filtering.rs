// Opt-out and opt-in filtering, with and without residual swapping, and
// the audit record of each run.

use factorfilter::eval::base_accuracy;
use factorfilter::filter::{apply_filter, FilterAudit, FilterMode, FilterPolicy, ResidualMode};
use factorfilter::model::{train, Hyperparams};
use factorfilter::synthworld::{make_world_from, WorldConfig};

pub fn run_example() -> factorfilter::Result<()> {
    let spec = WorldConfig {
        noise_sigma: 0.3,
        ..WorldConfig::default()
    }
    .build()?;
    let train_set = make_world_from(&spec, 0, 2000)?;
    let test_set = make_world_from(&spec, 2000, 1000)?;
    let hp = Hyperparams {
        epochs: 150,
        ..Hyperparams::default()
    };
    let model = train(&train_set, &hp, &(0..spec.schema.len()).collect::<Vec<_>>())?;
    let names = spec.schema.names();
    let fmt = |acc: &[f64]| acc.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join(" ");
    println!("{:<28}{}", "attributes", names.join(" "));
    println!("{:<28}{}", "unfiltered", fmt(&base_accuracy(&model, &test_set)));

    for (mode, attrs) in [(FilterMode::OptOut, vec!["gender"]), (FilterMode::OptIn, vec!["age", "glasses"])] {
        for rm in [ResidualMode::Keep, ResidualMode::SwapWithinBatch] {
            let policy = FilterPolicy::new(mode, &attrs, rm, 7);
            let out = apply_filter(&model, &test_set, &policy)?;
            let acc = base_accuracy(&model, &out.to_dataset(&test_set)?);
            println!("{:<28}{}", format!("{}/{}", mode.as_str(), rm.as_str()), fmt(&acc));
            let audit = FilterAudit::new(&model, &policy, &out);
            println!("  hidden {:?}, replacement counts {:?}", audit.hidden_attributes, audit.replacement_histogram);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> factorfilter::Result<()> {
    run_example()
}
