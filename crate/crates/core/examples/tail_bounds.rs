//! Exceedance frequencies of the supermartingale functionals against their
//! exponential tail bounds.

use wavemix::config::Manifest;
use wavemix::mixing::{gaussian_bump, run_ensemble, supermartingale_tail, EnsembleSpec, InitialData, TailConstants, TailFunctional};

fn main() -> wavemix::Result<()> {
    let setup = Manifest::default().setup()?;
    let dy = &setup.dynamics;
    let c = TailConstants::from_model(dy, &setup.model)?;
    println!("beta = {:.5}, beta0 = {:.5}", c.beta(), c.beta0());
    let spec = EnsembleSpec {
        paths: 100,
        t_end: 10.0,
        every: 50,
        weighted: true,
        ..Default::default()
    };
    let ens = run_ensemble(&InitialData::Fixed(gaussian_bump(dy, 1.0)?), dy, &setup.model, &spec, None)?;
    for f in TailFunctional::ALL {
        let rep = supermartingale_tail(&ens, f, &[2.0, 5.0, 10.0], &c)?;
        for r in &rep.rows {
            println!(
                "{:<20} rho {:>4}: freq {:.3} (Wilson hi {:.3}) vs bound {:.3}",
                f.name(),
                r.rho,
                r.freq,
                r.wilson_hi,
                r.bound
            );
        }
    }
    Ok(())
}
