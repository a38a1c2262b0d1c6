// How a model that never learned a code for one attribute treats it
// under filtering, compared with a model that did.

use factorfilter::eval::{unseen_attribute_study, UnseenConfig};
use factorfilter::model::Hyperparams;
use factorfilter::synthworld::WorldConfig;

pub fn run_example() -> factorfilter::Result<()> {
    let cfg = UnseenConfig {
        held_out: "glasses".into(),
        world: WorldConfig {
            noise_sigma: 0.5,
            ..WorldConfig::default()
        },
        hyperparams: Hyperparams {
            epochs: 200,
            ..Hyperparams::default()
        },
        train_samples: 3000,
        eval_samples: 3000,
    };
    let result = unseen_attribute_study(&cfg, 3, 0)?;
    println!(
        "held out {}: base {:.3}, majority {:.3}",
        result.held_out_attribute, result.base_acc, result.majority_acc
    );
    for row in &result.rows {
        println!(
            "{:>8}/{:<18} filter {:<10} with code {:.3} without {:.3}",
            row.mode.as_str(),
            row.residual_mode.as_str(),
            row.filtered_attribute,
            row.acc_with_factor,
            row.acc_without_factor
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> factorfilter::Result<()> {
    run_example()
}
