//! First joint entry of two solutions, driven by the same noise, into a ball.

use rayon::prelude::*;
use wavemix::config::Manifest;
use wavemix::grid::State;
use wavemix::mixing::{first_joint_entry, gaussian_bump, recurrence_stats};

fn main() -> wavemix::Result<()> {
    let setup = Manifest::default().setup()?;
    let dy = &setup.dynamics;
    let y0 = gaussian_bump(dy, 5.0)?;
    let y1 = State::zeros(dy.grid());
    let (radius, horizon) = (2.0, 20.0);
    let entries: Vec<Option<f64>> = (0..40u64)
        .into_par_iter()
        .map(|p| first_joint_entry(&y0, &y1, dy, &setup.model, p, radius, horizon, 50))
        .collect::<wavemix::Result<_>>()?;
    let norms = vec![(5.0, 0.0); entries.len()];
    let rep = recurrence_stats(&entries, &norms, radius, horizon, &[2.0, 5.0, 10.0, 20.0], &[1.0, 2.0])?;
    for (t, p, lo, hi) in &rep.hitting {
        println!("P(tau <= {t:>4}) = {p:.3}  [{lo:.3}, {hi:.3}]");
    }
    for (p, m) in &rep.moments {
        println!("E[min(tau, {horizon})^{p}] = {m:.3}");
    }
    println!("censored {}/{}, mean G = {:.2}", rep.censored, rep.paths, rep.mean_g);
    Ok(())
}
