//! Dual-Lipschitz distance between the laws started at 0 and at a bump,
//! its noise floor and a fitted polynomial rate. Writes `mixing_rate.svg`.
//!
//! cargo run --release --example mixing_rate -- [paths] [T]

use wavemix::config::Manifest;
use wavemix::grid::State;
use wavemix::mixing::{
    distance_series, fit_polynomial_rate, gaussian_bump, paired_floor, run_ensemble, DualLipschitzDictionary,
    EnsembleSpec, InitialData,
};
use wavemix::output::{loglog_svg, Provenance};

fn main() -> wavemix::Result<()> {
    let mut args = std::env::args().skip(1);
    let paths: usize = args.next().map_or(40, |s| s.parse().expect("paths"));
    let t_end: f64 = args.next().map_or(20.0, |s| s.parse().expect("T"));
    let manifest = Manifest::default();
    let setup = manifest.setup()?;
    let dy = &setup.dynamics;
    let dict = DualLipschitzDictionary::new(dy, 64, 256, 11)?;
    let spec = EnsembleSpec {
        paths,
        t_end,
        every: 250,
        ..Default::default()
    };
    // both ensembles use paths 0..paths, so they share their noise
    let a = run_ensemble(&InitialData::Fixed(State::zeros(dy.grid())), dy, &setup.model, &spec, Some(&dict))?;
    let b = run_ensemble(&InitialData::Fixed(gaussian_bump(dy, 5.0)?), dy, &setup.model, &spec, Some(&dict))?;
    let series = distance_series(&a, &b, &dict)?;
    for (i, (t, d)) in series.iter().enumerate().step_by(4) {
        println!("t = {t:>5.1}  d = {d:.4e}  floor = {:.2e}", paired_floor(&a, &b, &dict, i)?);
    }
    let fit = fit_polynomial_rate(&series, 5.0, 1e-4).ok();
    if let Some(f) = &fit {
        println!("d ~ {:.3} (t+1)^{:.3}, R^2 = {:.3}", f.constant(), f.slope, f.r_squared);
    }
    std::fs::write("mixing_rate.svg", loglog_svg(&series, fit.as_ref(), "mixing distance", &Provenance::of(&manifest)))?;
    Ok(())
}
