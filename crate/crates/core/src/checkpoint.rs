//! JSON checkpoints of a single path.
//!
//! A checkpoint stores the modal state, the step counter (which fixes the
//! position in the path's noise stream) and the running functionals. The
//! nonlinear term is a pure function of the position modes, so resuming is
//! bitwise identical to never having stopped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Dynamics, Phase};
use crate::error::{Error, Result};
use crate::functionals::{Accumulators, EnergySnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest_hash: String,
    pub version: String,
    pub seed: u64,
    pub path: u64,
    pub step: u64,
    pub t: f64,
    pub pos_modes: Vec<f64>,
    pub vel_modes: Vec<f64>,
    pub last_snapshot: Option<EnergySnapshot>,
    pub accumulators: Option<Accumulators>,
}

impl Checkpoint {
    pub fn capture(manifest_hash: &str, seed: u64, path: u64, phase: &Phase) -> Self {
        Self {
            manifest_hash: manifest_hash.to_string(),
            version: crate::output::VERSION.to_string(),
            seed,
            path,
            step: phase.step(),
            t: phase.t(),
            pos_modes: phase.pos_modes().to_vec(),
            vel_modes: phase.vel_modes().to_vec(),
            last_snapshot: None,
            accumulators: None,
        }
    }

    pub fn with_functionals(mut self, snap: EnergySnapshot, acc: Accumulators) -> Self {
        self.last_snapshot = Some(snap);
        self.accumulators = Some(acc);
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Rebuilds the phase, refusing if the checkpoint belongs to another manifest.
    pub fn resume(&self, dynamics: &Dynamics, manifest_hash: &str) -> Result<Phase> {
        if self.manifest_hash != manifest_hash {
            return Err(Error::HashMismatch {
                expected: manifest_hash.to_string(),
                found: self.manifest_hash.clone(),
            });
        }
        let mut phase = dynamics.phase_from_modes(self.pos_modes.clone(), self.vel_modes.clone())?;
        phase.set_step(self.step);
        Ok(phase)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{continue_trajectory, run_trajectory, PhysParams, System};
    use crate::grid::{GridSpec, State};
    use crate::noise::{CoeffSpec, NoiseModel};
    use crate::spectral::SineBasis;
    use std::sync::Arc;

    #[test]
    fn resume_is_bitwise_and_hash_checked() {
        let grid = GridSpec::new(20.0, 127).unwrap();
        let basis = Arc::new(SineBasis::new(&grid));
        let dy = Dynamics::new(basis.clone(), PhysParams::defaults(&basis).unwrap(), 1e-2).unwrap();
        let model = NoiseModel::with_basis(basis, &CoeffSpec::PowerLaw { b0: 0.5, q: 3.5, modes: 32, n_forced: 8 }, 4).unwrap();
        let y = State {
            pos: grid.sample(|x| (-x * x).exp()),
            vel: grid.zeros(),
        };
        let full = run_trajectory(&y, &dy, System::Primal, &model, 2, 2.0, &mut []).unwrap();
        let half = run_trajectory(&y, &dy, System::Primal, &model, 2, 1.0, &mut []).unwrap();
        let cp = Checkpoint::capture("h", 4, 2, &half.final_phase);
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cp.json");
        cp.write(&file).unwrap();
        let back = Checkpoint::read(&file).unwrap();
        assert_eq!(back, cp);
        assert!(matches!(back.resume(&dy, "other"), Err(Error::HashMismatch { .. })));
        let phase = back.resume(&dy, "h").unwrap();
        let resumed = continue_trajectory(phase, &dy, System::Primal, &model, 2, 2.0, &mut []).unwrap();
        assert_eq!(resumed.final_phase.pos_modes(), full.final_phase.pos_modes());
        assert_eq!(resumed.final_phase.vel_modes(), full.final_phase.vel_modes());
    }
}
