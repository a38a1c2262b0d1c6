// Trains a factor model, reports per-attribute classifier accuracy and
// checks the analytic gradients against finite differences.

use factorfilter::model::{gradient_check, train, Hyperparams};
use factorfilter::synthworld::{make_world, WorldConfig};

pub fn run_example() -> factorfilter::Result<()> {
    let spec = WorldConfig {
        noise_sigma: 0.3,
        ..WorldConfig::default()
    }
    .build()?;
    let data = make_world(&spec, 2000)?;
    let hp = Hyperparams {
        epochs: 150,
        ..Hyperparams::default()
    };
    let model = train(&data, &hp, &(0..spec.schema.len()).collect::<Vec<_>>())?;
    for a in &model.accuracies {
        println!("{:>10}: train {:.3} validation {:.3}", a.attribute, a.train, a.validation);
    }
    let log = model.training.as_ref().expect("trained");
    println!(
        "autoencoder loss {:.4} -> {:.4}, validation reconstruction error {:.3}",
        log.autoencoder_loss_history[0],
        log.autoencoder_loss_history.last().unwrap(),
        log.validation_reconstruction_error
    );
    let check = gradient_check(&model, &data)?;
    println!("gradient check: {} parameters, max relative error {:.2e}", check.parameters_checked, check.max_relative_error);
    Ok(())
}

#[allow(dead_code)]
fn main() -> factorfilter::Result<()> {
    run_example()
}
