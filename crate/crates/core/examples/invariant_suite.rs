//! Every numerical invariant check with its value and threshold.
//!
//! cargo run --release --example invariant_suite -- [full]

use wavemix::config::Manifest;
use wavemix::verify::{run_invariant_suite, VerifyScale};

fn main() -> wavemix::Result<()> {
    let scale = match std::env::args().nth(1).as_deref() {
        Some("full") => VerifyScale::FULL,
        _ => VerifyScale::QUICK,
    };
    let setup = Manifest::default().setup()?;
    let rep = run_invariant_suite(&setup.dynamics, &setup.model, scale, 0)?;
    for c in &rep.checks {
        let tag = if c.passed { "ok  " } else { "FAIL" };
        println!("{tag} {:<28} {:>12.4e} vs {:>10.3e}  {}", c.name, c.value, c.threshold, c.detail);
    }
    std::process::exit(if rep.passed() { 0 } else { 1 });
}
