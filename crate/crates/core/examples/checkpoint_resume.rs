//! Interrupting a path at a checkpoint and resuming it reproduces the
//! uninterrupted run bit for bit.

use wavemix::checkpoint::Checkpoint;
use wavemix::config::Manifest;
use wavemix::dynamics::{continue_trajectory, run_trajectory, System};
use wavemix::mixing::gaussian_bump;

fn main() -> wavemix::Result<()> {
    let manifest = Manifest::default();
    let setup = manifest.setup()?;
    let dy = &setup.dynamics;
    let y0 = gaussian_bump(dy, 2.0)?;
    let full = run_trajectory(&y0, dy, System::Primal, &setup.model, 3, 4.0, &mut [])?;
    let half = run_trajectory(&y0, dy, System::Primal, &setup.model, 3, 2.0, &mut [])?;

    let dir = std::env::temp_dir().join("wavemix-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let file = dir.join("checkpoint.json");
    Checkpoint::capture(&manifest.hash(), manifest.noise.seed, 3, &half.final_phase).write(&file)?;

    let phase = Checkpoint::read(&file)?.resume(dy, &manifest.hash())?;
    let resumed = continue_trajectory(phase, dy, System::Primal, &setup.model, 3, 4.0, &mut [])?;
    let same = resumed.final_phase.pos_modes() == full.final_phase.pos_modes()
        && resumed.final_phase.vel_modes() == full.final_phase.vel_modes();
    println!("resumed at step {} -> bitwise identical at T = 4: {same}", half.final_phase.step());

    let mut other = manifest.clone();
    other.physics.gamma = 0.6;
    match Checkpoint::read(&file)?.resume(dy, &other.hash()) {
        Err(e) => println!("altered gamma: {e}"),
        Ok(_) => println!("altered gamma was accepted"),
    }
    Ok(())
}
