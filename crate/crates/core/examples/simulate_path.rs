//! One noise path from a Gaussian bump, printing the energy functionals.
//!
//! cargo run --release --example simulate_path -- [T] [radius]

use wavemix::config::Manifest;
use wavemix::dynamics::{run_trajectory, System};
use wavemix::functionals::FunctionalRecorder;
use wavemix::mixing::gaussian_bump;

fn main() -> wavemix::Result<()> {
    let mut args = std::env::args().skip(1);
    let t_end: f64 = args.next().map_or(10.0, |s| s.parse().expect("T"));
    let radius: f64 = args.next().map_or(3.0, |s| s.parse().expect("radius"));
    let setup = Manifest::default().setup()?;
    let dy = &setup.dynamics;
    let y0 = gaussian_bump(dy, radius)?;
    // one sample per 0.5 time units, weighted functionals included
    let mut rec = FunctionalRecorder::new(dy, 250, true, 1.0);
    run_trajectory(&y0, dy, System::Primal, &setup.model, 0, t_end, &mut [&mut rec])?;
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "t", "|xi|_H^2", "E", "E^psi", "F^psi");
    for (s, a) in rec.snapshots.iter().zip(&rec.accumulators) {
        println!("{:>6.2} {:>12.5} {:>12.5} {:>12.5} {:>12.5}", s.t, s.xi_h_sq, s.e, s.e_psi, a.f_psi);
    }
    Ok(())
}
