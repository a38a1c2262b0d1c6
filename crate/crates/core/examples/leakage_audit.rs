// Fresh probes trained on filtered output measure how much of a hidden
// attribute survives, as the residual-leakage knob grows.

use factorfilter::eval::majority_accuracy;
use factorfilter::filter::{audit_leakage, FilterMode, FilterPolicy, ResidualMode};
use factorfilter::model::{train, Hyperparams};
use factorfilter::synthworld::{make_world_from, WorldConfig};

pub fn run_example() -> factorfilter::Result<()> {
    println!("{:>6} {:>8} {:>8} {:>8}", "lambda", "majority", "keep", "swap");
    for lambda in [0.0, 0.5, 1.0] {
        let spec = WorldConfig {
            residual_leakage: lambda,
            ..WorldConfig::default()
        }
        .build()?;
        let train_set = make_world_from(&spec, 0, 3000)?;
        let audit_set = make_world_from(&spec, 3000, 4000)?;
        let hp = Hyperparams {
            penalty_weight: 2.0,
            ..Hyperparams::default()
        };
        let model = train(&train_set, &hp, &(0..spec.schema.len()).collect::<Vec<_>>())?;
        let glasses = spec.schema.index_of("glasses")?;
        let probe = |rm| audit_leakage(&model, &audit_set, &FilterPolicy::new(FilterMode::OptOut, &["glasses"], rm, 3), "glasses");
        println!(
            "{lambda:>6.1} {:>8.3} {:>8.3} {:>8.3}",
            majority_accuracy(&audit_set)[glasses],
            probe(ResidualMode::Keep)?,
            probe(ResidualMode::SwapWithinBatch)?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> factorfilter::Result<()> {
    run_example()
}
