//! Noise-free landing time from a ball and the probability of reaching a small
//! ball under the full dynamics.

use wavemix::config::Manifest;
use wavemix::mixing::{irreducibility_probe, ProbeOptions};

fn main() -> wavemix::Result<()> {
    let setup = Manifest::default().setup()?;
    let opts = ProbeOptions {
        paths: 50,
        ..Default::default()
    };
    let rep = irreducibility_probe(2.0, 0.5, &setup.dynamics, &setup.model, &opts)?;
    println!("T = {}, worst noise-free landing |y(T)|_H = {:.4}", rep.t_found, rep.worst_landing);
    println!("p0_hat = {:.3} ({}/{}), Wilson [{:.3}, {:.3}]", rep.p0_hat, rep.hits, rep.paths, rep.wilson_lo, rep.wilson_hi);
    Ok(())
}
