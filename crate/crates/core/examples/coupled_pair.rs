//! Coupled primal/auxiliary pair: contraction of `w = u - v`, fitted
//! Foias-Prodi constants and the Girsanov drift.
//!
//! cargo run --release --example coupled_pair -- [N] [T]

use wavemix::config::Manifest;
use wavemix::coupling::{foias_prodi_check, run_coupled, tv_surrogate, CoupledConfig, FpVariant};
use wavemix::grid::State;
use wavemix::mixing::gaussian_bump;

fn main() -> wavemix::Result<()> {
    let mut args = std::env::args().skip(1);
    let rank: usize = args.next().map_or(64, |s| s.parse().expect("N"));
    let t_end: f64 = args.next().map_or(20.0, |s| s.parse().expect("T"));
    let setup = Manifest::default().setup()?;
    let dy = &setup.dynamics;
    let y0 = gaussian_bump(dy, 5.0)?;
    let y1 = State::zeros(dy.grid());
    let cfg = CoupledConfig {
        rank,
        t_end,
        every: 250,
        ..Default::default()
    };
    let run = run_coupled(&y0, &y1, dy, &setup.model, 0, &cfg)?;
    println!("{:>6} {:>12} {:>12} {:>12}", "t", "|w|_H", "|u-u'|_H", "drift");
    for s in &run.samples {
        println!("{:>6.1} {:>12.4e} {:>12.4e} {:>12.4e}", s.t, s.w_sq.sqrt(), s.prime_sq.sqrt(), s.drift_cum);
    }
    let alpha = dy.params().alpha;
    let c = foias_prodi_check(&run, FpVariant::Part1, alpha, 200)?;
    let cs = foias_prodi_check(&run, FpVariant::Part2 { eps: 0.1, t0: 1.0 }, alpha, 200)?;
    println!("decay exponent {:?}", run.decay_exponent(5.0, 1e-14));
    println!("C = {:.4}, C_* = {:.4}", c.constant, cs.constant);
    if rank > 0 {
        println!("tv surrogate {:.4}", tv_surrogate(run.drift_total, setup.model.b_min(rank)?)?);
    }
    Ok(())
}
