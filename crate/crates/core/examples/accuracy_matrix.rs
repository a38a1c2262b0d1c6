// Relative-accuracy matrices (rows classified, columns filtered) for the
// four filter configurations, written as SVG heatmaps.

use factorfilter::eval::accuracy_matrix;
use factorfilter::filter::{FilterMode, ResidualMode};
use factorfilter::model::{train, Hyperparams};
use factorfilter::svg::accuracy_heatmap;
use factorfilter::synthworld::{make_world_from, DependencySpec, WorldConfig};

pub fn run_example() -> factorfilter::Result<()> {
    let spec = WorldConfig {
        dependency: Some(DependencySpec::faces()),
        noise_sigma: 0.5,
        entanglement: 0.3,
        residual_leakage: 0.3,
        ..WorldConfig::default()
    }
    .build()?;
    let train_set = make_world_from(&spec, 0, 3000)?;
    let test_set = make_world_from(&spec, 3000, 2000)?;
    let hp = Hyperparams {
        epochs: 200,
        ..Hyperparams::default()
    };
    let model = train(&train_set, &hp, &(0..spec.schema.len()).collect::<Vec<_>>())?;
    let dir = std::env::temp_dir().join("factorfilter-accuracy-matrix");
    std::fs::create_dir_all(&dir).map_err(|e| factorfilter::Error::InvalidArgument(e.to_string()))?;

    for mode in [FilterMode::OptOut, FilterMode::OptIn] {
        for rm in [ResidualMode::Keep, ResidualMode::SwapWithinBatch] {
            let m = accuracy_matrix(&model, &test_set, mode, rm, 3, 0)?;
            println!("{}/{}", mode.as_str(), rm.as_str());
            println!("{:>12} {}", "", m.filtered_attributes.iter().map(|a| format!("{a:>11}")).collect::<String>());
            for (name, row) in m.classified_attributes.iter().zip(&m.rel_acc) {
                let cells: String = row.iter().map(|v| format!("{:>11}", v.map_or("n/a".into(), |v| format!("{v:.3}")))).collect();
                println!("{name:>12} {cells}");
            }
            let path = dir.join(format!("{}_{}.svg", mode.as_str(), rm.as_str()));
            factorfilter::io::write_atomic(&path, accuracy_heatmap(&m).as_bytes())?;
        }
    }
    println!("heatmaps in {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> factorfilter::Result<()> {
    run_example()
}
