// The whole pipeline through the command-line entry point: world, model,
// filtered sample, association matrices and the evaluation report.

pub fn run_example() -> factorfilter::Result<()> {
    let dir = std::env::temp_dir().join("factorfilter-demo");
    let out = dir.to_string_lossy().into_owned();
    let code = factorfilter::cli::run(["factorfilter", "--out", &out, "demo", "--n", "4000"]);
    if code != 0 {
        return Err(factorfilter::Error::InvalidArgument(format!("demo exited with {code}")));
    }
    println!("outputs in {out}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> factorfilter::Result<()> {
    run_example()
}
