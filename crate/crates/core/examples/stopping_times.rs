//! Calibrated stopping rules and the frequency with which they fire as the
//! offset `rho` grows.

use wavemix::config::Manifest;
use wavemix::coupling::{calibrate_stopping, stopping_tail};
use wavemix::mixing::{gaussian_bump, run_ensemble, EnsembleSpec, InitialData};

fn main() -> wavemix::Result<()> {
    let setup = Manifest::default().setup()?;
    let dy = &setup.dynamics;
    let alpha = dy.params().alpha;
    let spec = EnsembleSpec {
        paths: 120,
        t_end: 10.0,
        every: 50,
        weighted: true,
        ..Default::default()
    };
    let ens = run_ensemble(&InitialData::Fixed(gaussian_bump(dy, 1.0)?), dy, &setup.model, &spec, None)?;
    for p in [1.0, 2.0] {
        let series: Vec<_> = (0..ens.records.len())
            .map(|i| {
                let acc = ens.accumulators(i, alpha, p)?;
                let s = ens.times.iter().zip(&acc).map(|(t, a)| (*t, a.f_psi_p)).collect::<Vec<_>>();
                Ok((s, ens.records[i].snapshots[0].e))
            })
            .collect::<wavemix::Result<_>>()?;
        let (pilot, rest) = series.split_at(40);
        let rule = calibrate_stopping(pilot, p, 5.0, 0.2, 0.05)?;
        let tail = stopping_tail(rest, &rule, &[2.0, 5.0, 10.0])?;
        println!("p = {p}: K = {:.4}", rule.k_c);
        for r in &tail.rows {
            println!("  rho {:>4}: {:>3}/{} fired, Wilson [{:.3}, {:.3}]", r.rho, r.fired, r.paths, r.wilson_lo, r.wilson_hi);
        }
    }
    Ok(())
}
