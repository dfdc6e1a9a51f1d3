//! Deterministic and pathwise invariant checks with machine-readable outcomes.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dynamics::{
    continue_trajectory, mode_flow, run_trajectory, steps_for, Dynamics, Integrator, Phase, System,
};
use crate::error::Result;
use crate::functionals::{energy_identity_residual, qv_increment_direct, record_identities, Snapshotter};
use crate::grid::State;
use crate::mixing::{gaussian_bump, random_state};
use crate::noise::{build_basis, NoiseIncrement, NoiseModel};
use crate::rng::SimRng;

/// Outcome of one check: `value` is compared against `threshold` in the
/// direction stated by `detail`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
            detail: detail.into(),
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value >= threshold,
            value,
            threshold,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Input-free dissipation: `E(t) <= 1.01 E(0) e^{-a t}` at every sampled time,
/// from `samples` random states with `|y_0|_H <= radius`. Returns the largest
/// ratio `E(t) / (E(0) e^{-a t})`.
pub fn dissipation_ratio(dynamics: &Dynamics, samples: usize, radius: f64, t_end: f64, every: u64, seed: u64) -> Result<f64> {
    let alpha = dynamics.params().alpha;
    let model = NoiseModel::with_basis(dynamics.basis().clone(), &crate::noise::CoeffSpec::Explicit { values: vec![0.0], n_forced: 0 }, 0)?;
    let snap = Snapshotter::new(dynamics);
    let mut rng = SimRng::new(seed, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let r = radius * rng.uniform();
        let y0 = random_state(dynamics, 32, r.max(1e-3), &mut rng)?;
        let mut e0 = None;
        let mut obs = |d: &Dynamics, p: &Phase| -> Result<()> {
            if p.step().is_multiple_of(every) {
                let e = snap.unweighted(d, p).e;
                let base = *e0.get_or_insert(e);
                worst = worst.max(e / (base * (-alpha * p.t()).exp()));
            }
            Ok(())
        };
        run_trajectory(&y0, dynamics, System::Truncated, &model, 0, t_end, &mut [&mut obs])?;
    }
    Ok(worst)
}

/// Largest relative gap between the quadratic variation accumulated from modal
/// coefficients and the one from direct inner products with the basis fields.
pub fn quadratic_variation_gap(initial: &State, dynamics: &Dynamics, model: &NoiseModel, path: u64, steps: u64) -> Result<f64> {
    let alpha = dynamics.params().alpha;
    let grid = *dynamics.grid();
    let fields = build_basis(&grid, model.modes())?;
    let mut phase = dynamics.phase(initial)?;
    let mut stream = model.stream(path);
    let dt = dynamics.dt();
    let mut inc = NoiseIncrement::zeros(model.modes(), dt);
    let (mut modal, mut direct) = (0.0, 0.0);
    for _ in 0..steps {
        model.fill_increment(dt, &mut stream, &mut inc);
        dynamics.advance_deterministic(&mut phase);
        let z_modes: Vec<f64> = phase
            .pos_modes()
            .iter()
            .zip(phase.vel_modes())
            .map(|(u, v)| v + alpha * u)
            .collect();
        modal += 4.0
            * dt
            * model
                .coeffs()
                .iter()
                .zip(&z_modes)
                .map(|(b, z)| b * b * z * z)
                .sum::<f64>();
        let s = dynamics.state(&phase);
        let z: Vec<f64> = s.vel.iter().zip(s.pos.iter()).map(|(v, u)| v + alpha * u).collect();
        direct += qv_increment_direct(&z, &fields, model.coeffs(), dt, &grid)?;
        dynamics.apply_noise(&mut phase, &inc)?;
    }
    Ok(if direct == 0.0 && modal == 0.0 {
        0.0
    } else {
        (modal - direct).abs() / direct.abs().max(modal.abs())
    })
}

/// Observed convergence order of the deterministic scheme: errors at `dt`
/// and `dt/2` against a `dt/8` reference, in the `H` norm at `t_end`.
pub fn strang_order(dynamics: &Dynamics, initial: &State, dt: f64, t_end: f64) -> Result<f64> {
    let quiet = NoiseModel::with_basis(dynamics.basis().clone(), &crate::noise::CoeffSpec::Explicit { values: vec![0.0], n_forced: 0 }, 0)?;
    let run = |h: f64| -> Result<Phase> {
        let integ = Integrator::new(dynamics.basis().eigenvalues(), dynamics.params().gamma, h)?;
        let d = Dynamics::with_integrator(dynamics.basis().clone(), dynamics.params().clone(), integ)?;
        Ok(run_trajectory(initial, &d, System::Noiseless, &quiet, 0, t_end, &mut [])?.final_phase)
    };
    let reference = run(dt / 8.0)?;
    let eig = dynamics.basis().eigenvalues();
    let alpha = dynamics.params().alpha;
    let err = |p: &Phase| {
        let mut s = 0.0;
        for k in 0..eig.len() {
            let du = p.pos_modes()[k] - reference.pos_modes()[k];
            let dz = p.vel_modes()[k] - reference.vel_modes()[k] + alpha * du;
            s += eig[k] * du * du + dz * dz;
        }
        s.sqrt()
    };
    let coarse = err(&run(dt)?);
    let fine = err(&run(dt / 2.0)?);
    Ok((coarse / fine).log2())
}

/// Linear, input-free stepping over `steps` steps against the closed-form
/// flow evaluated once at the final time. Returns the largest relative error
/// in the per-mode energy `(a'^2 + lambda a^2) / 2`.
pub fn linear_mode_energy_error(dynamics: &Dynamics, initial: &State, steps: u64) -> Result<f64> {
    let integ = Integrator::new(dynamics.basis().eigenvalues(), dynamics.params().gamma, dynamics.dt())?.without_nonlinearity();
    let lin = Dynamics::with_integrator(dynamics.basis().clone(), dynamics.params().clone(), integ)?;
    let mut p = lin.phase(initial)?;
    let (a0, b0) = (p.pos_modes().to_vec(), p.vel_modes().to_vec());
    for _ in 0..steps {
        lin.step_truncated(&mut p)?;
    }
    let t = steps as f64 * lin.dt();
    let gamma = lin.params().gamma;
    let mut worst: f64 = 0.0;
    for (k, &l) in lin.basis().eigenvalues().iter().enumerate() {
        let f = mode_flow(l, gamma, t);
        let a = f[0] * a0[k] + f[1] * b0[k];
        let b = f[2] * a0[k] + f[3] * b0[k];
        let exact = 0.5 * (b * b + l * a * a);
        if exact < 1e-200 {
            continue;
        }
        let got = 0.5 * (p.vel_modes()[k].powi(2) + l * p.pos_modes()[k].powi(2));
        worst = worst.max((got - exact).abs() / exact);
    }
    Ok(worst)
}

/// Runs `t_end` in one go and in two halves joined by a JSON checkpoint;
/// returns whether the final modal states agree bit for bit.
pub fn checkpoint_resume_is_bitwise(dynamics: &Dynamics, model: &NoiseModel, initial: &State, t_end: f64, path: u64) -> Result<bool> {
    let steps = steps_for(t_end, dynamics.dt())?;
    let half = (steps / 2) as f64 * dynamics.dt();
    let full = run_trajectory(initial, dynamics, System::Primal, model, path, t_end, &mut [])?;
    let first = run_trajectory(initial, dynamics, System::Primal, model, path, half, &mut [])?;
    let cp = Checkpoint::capture("verify", model.seed(), path, &first.final_phase);
    let restored: Checkpoint = serde_json::from_str(&serde_json::to_string(&cp)?)?;
    let phase = restored.resume(dynamics, "verify")?;
    let resumed = continue_trajectory(phase, dynamics, System::Primal, model, path, t_end, &mut [])?;
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok(same(full.final_phase.pos_modes(), resumed.final_phase.pos_modes())
        && same(full.final_phase.vel_modes(), resumed.final_phase.vel_modes()))
}

/// Strictly decreasing `qn_cutoff_ratio` over increasing ranks on a fixed test set.
pub fn cutoff_ratios(model: &NoiseModel, ranks: &[usize], a_cut: f64, s: f64, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let len = model.basis().len();
    let mut rng = SimRng::new(seed, 5);
    let tests: Vec<Vec<f64>> = (0..trials)
        .map(|_| (0..len).map(|k| rng.normal() * (2.0 + k as f64).powi(-2)).collect())
        .collect();
    ranks
        .iter()
        .map(|&n| model.qn_cutoff_ratio_on(n, a_cut, s, &tests))
        .collect()
}

/// Size of the invariant suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyScale {
    pub identity_paths: usize,
    pub identity_steps: u64,
    pub dissipation_samples: usize,
    pub dissipation_horizon: f64,
    pub linear_steps: u64,
}

impl VerifyScale {
    pub const QUICK: VerifyScale = VerifyScale {
        identity_paths: 2,
        identity_steps: 200,
        dissipation_samples: 2,
        dissipation_horizon: 10.0,
        linear_steps: 2000,
    };
    pub const FULL: VerifyScale = VerifyScale {
        identity_paths: 10,
        identity_steps: 1000,
        dissipation_samples: 8,
        dissipation_horizon: 50.0,
        linear_steps: 10_000,
    };
}

/// Observer-free run of every invariant check.
pub fn run_invariant_suite(dynamics: &Dynamics, model: &NoiseModel, scale: VerifyScale, seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let unforced = Dynamics::with_integrator(
        dynamics.basis().clone(),
        dynamics.params().with_forcing(dynamics.grid().zeros()),
        dynamics.integrator().clone(),
    )?;
    let ratio = dissipation_ratio(&unforced, scale.dissipation_samples, 2.0, scale.dissipation_horizon, 50, seed)?;
    checks.push(CheckResult::at_most(
        "dissipation",
        ratio,
        1.01,
        "max_t E(t) / (E(0) exp(-alpha t)) without noise and forcing",
    ));
    let mut h_worst: f64 = 0.0;
    let mut psi_worst: f64 = 0.0;
    let mut qv_worst: f64 = 0.0;
    for path in 0..scale.identity_paths as u64 {
        let y0 = gaussian_bump(dynamics, 1.0 + path as f64 * 0.5)?;
        let rec = record_identities(&y0, dynamics, model, path, scale.identity_steps, true)?;
        let res = energy_identity_residual(&rec)?;
        h_worst = h_worst.max(res.h_max);
        psi_worst = psi_worst.max(res.psi_max);
        qv_worst = qv_worst.max(quadratic_variation_gap(&y0, dynamics, model, path, scale.identity_steps)?);
    }
    checks.push(CheckResult::at_most(
        "energy_identity",
        h_worst,
        1e-6,
        "max per-step residual of the |xi|_H^2 identity over (1 + E)",
    ));
    checks.push(CheckResult::at_most(
        "weighted_energy_identity",
        psi_worst,
        1e-6,
        "max per-step residual of the weighted identity over (1 + E)",
    ));
    checks.push(CheckResult::at_most(
        "quadratic_variation_routes",
        qv_worst,
        1e-10,
        "relative gap between modal and direct <M>",
    ));
    let bump = gaussian_bump(dynamics, 2.0)?;
    let order = strang_order(dynamics, &bump, 0.02, 2.0)?;
    checks.push(CheckResult::at_least("strang_order", order, 1.9, "observed order against a dt/8 reference"));
    let lin = linear_mode_energy_error(dynamics, &bump, scale.linear_steps)?;
    checks.push(CheckResult::at_most(
        "linear_mode_energy",
        lin,
        1e-10,
        "relative error of per-mode energy against the closed-form flow",
    ));
    let bitwise = checkpoint_resume_is_bitwise(dynamics, model, &bump, 1.0, 0)?;
    checks.push(CheckResult::at_least(
        "checkpoint_resume",
        if bitwise { 1.0 } else { 0.0 },
        1.0,
        "resumed run equals the uninterrupted one bit for bit",
    ));
    let m = dynamics.params().m;
    let ranks: Vec<usize> = [32usize, 128, 512].into_iter().filter(|&n| n < model.basis().len()).collect();
    for (label, s) in [("1", 1.0), ("2-2m", 2.0 - 2.0 * m)] {
        let r = cutoff_ratios(model, &ranks, 0.5 * dynamics.grid().half_width(), s, 100, seed)?;
        let decreasing = r.windows(2).all(|w| w[1] < w[0]);
        checks.push(CheckResult::at_least(
            &format!("cutoff_ratio_s={label}"),
            if decreasing { 1.0 } else { 0.0 },
            1.0,
            format!("||Q_N(chi f)|| / ||f||_s strictly decreasing over N = {ranks:?}: {r:?}"),
        ));
    }
    let margin = dynamics.params().quadratic_form_margin();
    checks.push(CheckResult::at_least(
        "quadratic_form_margin",
        margin,
        0.0,
        "smallest eigenvalue of the dissipation form",
    ));
    let sums = model.sums();
    checks.push(CheckResult::at_most(
        "noise_summability",
        sums.b3_tail_slope,
        crate::noise::NoiseSums::DIVERGENCE_SLOPE,
        "log-log slope of the |b_i| ||e_i||_2 summands",
    ));
    Ok(VerifyReport { checks })
}
