// Contingency tables, chi-squared, Cramér's V with its effect-size
// category, Theil's U and a Pearson regression.

use factorfilter::special::chi_squared_sf;
use factorfilter::stats::{
    categorize_cramers_v, chi_squared, cramers_v, pearson, uncertainty_coefficient, ContingencyTable,
};

pub fn run_example() -> factorfilter::Result<()> {
    let table = ContingencyTable::from_counts(vec![vec![8, 2], vec![2, 8]])?;
    let chi = chi_squared(&table)?;
    let v = cramers_v(&table)?;
    let dof = ((chi.rows - 1) * (chi.cols - 1)) as f64;
    println!("chi2 = {:.3} (df {dof}, p = {:.4})", chi.statistic, chi_squared_sf(chi.statistic, dof));
    println!("V = {v:.3}, {:?} at df_min 1", categorize_cramers_v(v, 1)?);

    let u = uncertainty_coefficient(&table)?;
    println!("U(row | col) = {:.6}", u.value);

    let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.1, 0.3, 0.2, 0.6, 0.5])?;
    println!("r = {:.3}, p = {:.3}, drop = {:.3} * x + {:.3}", r.pearson_r, r.p_value, r.slope, r.intercept);
    Ok(())
}

#[allow(dead_code)]
fn main() -> factorfilter::Result<()> {
    run_example()
}
