//! Sine basis, noise coefficients and their summability constants.

use wavemix::config::Manifest;
use wavemix::verify::cutoff_ratios;

fn main() -> wavemix::Result<()> {
    let setup = Manifest::default().setup()?;
    let model = &setup.model;
    let eig = setup.basis.eigenvalues();
    println!("grid: n = {}, dx = {:.5}", setup.grid.n(), setup.grid.dx());
    println!("{:>4} {:>10} {:>12}", "k", "lambda_k", "b_k");
    for k in [1usize, 2, 3, 4, 8, 16, 32, 64, 128, 256] {
        println!("{k:>4} {:>10.5} {:>12.4e}", eig[k - 1], model.coeffs()[k - 1]);
    }
    let s = model.sums();
    println!("B1 = {:.4}, B2 = {:.4}, B3 = {:.4}, B3 tail slope = {:.3}", s.b1, s.b2, s.b3, s.b3_tail_slope);
    println!("smallest forced coefficient b_min(64) = {:.3e}", model.b_min(64)?);
    let ratios = cutoff_ratios(model, &[32, 128, 512], 20.0, 1.0, 100, 0)?;
    println!("||Q_N(chi f)|| / ||f||_1 for N = 32, 128, 512: {ratios:?}");
    Ok(())
}
