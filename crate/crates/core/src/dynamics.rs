//! Time integration of the damped nonlinear wave equation
//! `u_tt + A u + gamma u_t + f(u) = h + dW/dt` and its variants.
//!
//! States are advanced in the sine basis. One step is a Strang splitting: half
//! kick by the forcing, exact damped-oscillator flow per mode, half kick, then the
//! additive noise increment is added to the velocity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{dot, Field, GridSpec, State};
use crate::noise::{NoiseIncrement, NoiseModel};
use crate::rng::SimRng;
use crate::spectral::{Scratch, SineBasis};

/// Physical constants of the equation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysParams {
    pub gamma: f64,
    pub m: f64,
    pub alpha: f64,
    pub h: Field,
}

impl PhysParams {
    /// Largest admissible `alpha` for a damping `gamma`.
    pub fn alpha_max(gamma: f64) -> f64 {
        (gamma / 4.0).min(0.25)
    }

    /// Validated parameters.
    pub fn new(gamma: f64, m: f64, alpha: f64, h: Field) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::Config(format!("m must lie in (0,1), got {m}")));
        }
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        let amax = Self::alpha_max(gamma);
        if alpha > amax {
            return Err(Error::Config(format!(
                "alpha = {alpha} exceeds min(gamma/4, 1/4) = {amax}"
            )));
        }
        if !h.is_finite() {
            return Err(Error::Config("forcing h must be finite".into()));
        }
        let p = Self { gamma, m, alpha, h };
        let margin = p.quadratic_form_margin();
        if margin < 0.0 {
            return Err(Error::Config(format!(
                "dissipation form is not bounded by -(3/2) alpha |y|_H^2 (margin {margin})"
            )));
        }
        Ok(p)
    }

    /// `alpha = min(gamma/4, 1/4)`.
    pub fn with_default_alpha(gamma: f64, m: f64, h: Field) -> Result<Self> {
        Self::new(gamma, m, Self::alpha_max(gamma), h)
    }

    /// Defaults: `gamma = 0.5`, `m = 0.5`, `h = 0.3 e_1 + 0.2 e_3`.
    pub fn defaults(basis: &SineBasis) -> Result<Self> {
        Self::with_default_alpha(0.5, 0.5, default_forcing(basis)?)
    }

    /// Smallest eigenvalue of the 2x2 form whose nonnegativity implies
    /// `-2a||u||_1^2 + 2(a-g)||z||^2 - 2a(a-g)(u,z) <= -(3/2) a (||u||_1^2 + ||z||^2)`.
    pub fn quadratic_form_margin(&self) -> f64 {
        let a = self.alpha;
        let p = 0.5 * a;
        let r = 2.0 * self.gamma - 3.5 * a;
        let off = a * (a - self.gamma).abs();
        let mean = 0.5 * (p + r);
        let dev = (0.25 * (p - r) * (p - r) + off * off).sqrt();
        mean - dev
    }

    /// Largest value of the dissipation form plus `(3/2) alpha |y|_H^2` over
    /// random modal states, normalized by `|y|_H^2`. Nonpositive when the bound holds.
    pub fn quadratic_form_probe(&self, eigenvalues: &[f64], trials: usize, rng: &mut SimRng) -> f64 {
        let a = self.alpha;
        let g = self.gamma;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..trials {
            let u: Vec<f64> = eigenvalues.iter().map(|_| rng.normal()).collect();
            let z: Vec<f64> = eigenvalues.iter().map(|_| rng.normal()).collect();
            let u1: f64 = u.iter().zip(eigenvalues).map(|(c, l)| l * c * c).sum();
            let zz = dot(&z, &z);
            let uz = dot(&u, &z);
            let form = -2.0 * a * u1 + 2.0 * (a - g) * zz - 2.0 * a * (a - g) * uz;
            worst = worst.max((form + 1.5 * a * (u1 + zz)) / (u1 + zz));
        }
        worst
    }

    pub fn with_forcing(&self, h: Field) -> Self {
        Self { h, ..self.clone() }
    }
}

/// `h = 0.3 e_1 + 0.2 e_3`.
pub fn default_forcing(basis: &SineBasis) -> Result<Field> {
    Ok(basis.mode(1)?.scaled(0.3).axpy(0.2, &basis.mode(3)?))
}

/// `f(u)_j = |u_j|^(2m) u_j`.
pub fn nonlinearity(u: &[f64], m: f64) -> Field {
    let mut out = vec![0.0; u.len()];
    apply_nonlinearity(u, m, &mut out);
    Field::new(out)
}

/// Writes `f(u)` into `out` and returns `sum_j u_j f(u)_j`.
fn apply_nonlinearity(u: &[f64], m: f64, out: &mut [f64]) -> f64 {
    let two_m = 2.0 * m;
    let mut pot = 0.0;
    if two_m == 1.0 {
        for (o, &x) in out.iter_mut().zip(u) {
            let f = x.abs() * x;
            *o = f;
            pot += x * f;
        }
    } else {
        for (o, &x) in out.iter_mut().zip(u) {
            let f = if x == 0.0 { 0.0 } else { x.abs().powf(two_m) * x };
            *o = f;
            pot += x * f;
        }
    }
    pot
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    StrangSpectral,
}

/// Step size plus the exact per-mode flow of `a'' + gamma a' + lambda a = 0` over one step.
#[derive(Debug, Clone)]
pub struct Integrator {
    dt: f64,
    gamma: f64,
    scheme: Scheme,
    /// Row-major 2x2 propagators mapping `(a, a')` to their values one step later.
    flows: Vec<[f64; 4]>,
    nonlinear: bool,
}

impl Integrator {
    pub fn new(eigenvalues: &[f64], gamma: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Argument(format!("time step must be positive, got {dt}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Argument(format!("damping must be nonnegative, got {gamma}")));
        }
        let flows = eigenvalues
            .iter()
            .map(|&l| mode_flow(l, gamma, dt))
            .collect();
        Ok(Self {
            dt,
            gamma,
            scheme: Scheme::StrangSpectral,
            flows,
            nonlinear: true,
        })
    }

    /// Same integrator with `f` removed from the kicks.
    pub fn without_nonlinearity(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn is_nonlinear(&self) -> bool {
        self.nonlinear
    }

    pub fn flow(&self, mode: usize) -> [f64; 4] {
        self.flows[mode]
    }
}

/// Exact propagator of the damped oscillator over time `t`.
pub fn mode_flow(lambda: f64, gamma: f64, t: f64) -> [f64; 4] {
    let half = 0.5 * gamma;
    let disc = lambda - half * half;
    let decay = (-half * t).exp();
    // c = cos(wt), s = sin(wt)/w (hyperbolic when overdamped)
    let (c, s) = if disc.abs() < 1e-14 * lambda.abs().max(1.0) {
        (1.0, t)
    } else if disc > 0.0 {
        let w = disc.sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    } else {
        let w = (-disc).sqrt();
        ((w * t).cosh(), (w * t).sinh() / w)
    };
    [
        decay * (c + half * s),
        decay * s,
        -decay * lambda * s,
        decay * (c - half * s),
    ]
}

/// Modal state of one system with cached physical displacement and nonlinear term.
#[derive(Debug, Clone)]
pub struct Phase {
    pos: Vec<f64>,
    vel: Vec<f64>,
    u: Vec<f64>,
    nl: Vec<f64>,
    potential: f64,
    step: u64,
    dt: f64,
    label: &'static str,
    scratch: Scratch,
    buf: Vec<f64>,
}

impl Phase {
    pub fn pos_modes(&self) -> &[f64] {
        &self.pos
    }

    pub fn vel_modes(&self) -> &[f64] {
        &self.vel
    }

    /// Physical displacement.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// Modal coefficients of the nonlinear term used by the next kick.
    pub fn nonlinear_modes(&self) -> &[f64] {
        &self.nl
    }

    /// `sum_j u_j f(u_j)`; times `dx` this is `int |u|^(2m+2)`.
    pub fn potential_sum(&self) -> f64 {
        self.potential
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn t(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn label(&self) -> &'static str {
        self.label
    }

    pub fn set_label(&mut self, label: &'static str) {
        self.label = label;
    }

    /// Overrides the step counter (used when resuming).
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// `|xi|_H^2 = sum lambda_k a_k^2 + sum (b_k + alpha a_k)^2`.
    pub fn h_norm_sq(&self, eigenvalues: &[f64], alpha: f64) -> f64 {
        let mut s = 0.0;
        for ((a, b), l) in self.pos.iter().zip(&self.vel).zip(eigenvalues) {
            let z = b + alpha * a;
            s += l * a * a + z * z;
        }
        s
    }

    fn is_finite(&self) -> bool {
        let s: f64 = self.u.iter().sum::<f64>() + self.vel.iter().sum::<f64>();
        s.is_finite() && self.potential.is_finite()
    }
}

/// Where the velocity kicks get their forcing during one deterministic sub-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Forcing {
    WithH,
    NoH,
}

/// Basis, parameters and integrator bundled for stepping.
#[derive(Debug, Clone)]
pub struct Dynamics {
    basis: Arc<SineBasis>,
    params: PhysParams,
    integ: Integrator,
    h_modes: Vec<f64>,
}

impl Dynamics {
    pub fn new(basis: Arc<SineBasis>, params: PhysParams, dt: f64) -> Result<Self> {
        let integ = Integrator::new(basis.eigenvalues(), params.gamma, dt)?;
        Self::with_integrator(basis, params, integ)
    }

    pub fn with_integrator(basis: Arc<SineBasis>, params: PhysParams, integ: Integrator) -> Result<Self> {
        basis.grid().check(&params.h)?;
        check_len(basis.len(), integ.flows.len())?;
        let h_modes = basis.analyze(&params.h)?;
        Ok(Self {
            basis,
            params,
            integ,
            h_modes,
        })
    }

    pub fn basis(&self) -> &Arc<SineBasis> {
        &self.basis
    }

    pub fn grid(&self) -> &GridSpec {
        self.basis.grid()
    }

    pub fn params(&self) -> &PhysParams {
        &self.params
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integ
    }

    pub fn dt(&self) -> f64 {
        self.integ.dt
    }

    pub fn h_modes(&self) -> &[f64] {
        &self.h_modes
    }

    /// Phase at step 0 for a physical state.
    pub fn phase(&self, state: &State) -> Result<Phase> {
        let grid = self.grid();
        grid.check(&state.pos)?;
        grid.check(&state.vel)?;
        let mut scratch = self.basis.scratch();
        let n = self.basis.len();
        let mut pos = vec![0.0; n];
        let mut vel = vec![0.0; n];
        self.basis.analyze_into(&state.pos, &mut pos, &mut scratch);
        self.basis.analyze_into(&state.vel, &mut vel, &mut scratch);
        self.phase_from_modes(pos, vel)
    }

    /// Phase at step 0 from modal coefficients.
    pub fn phase_from_modes(&self, pos: Vec<f64>, vel: Vec<f64>) -> Result<Phase> {
        let n = self.basis.len();
        check_len(n, pos.len())?;
        check_len(n, vel.len())?;
        let mut phase = Phase {
            pos,
            vel,
            u: vec![0.0; n],
            nl: vec![0.0; n],
            potential: 0.0,
            step: 0,
            dt: self.integ.dt,
            label: "u",
            scratch: self.basis.scratch(),
            buf: vec![0.0; n],
        };
        self.refresh(&mut phase);
        Ok(phase)
    }

    /// Physical state of a phase.
    pub fn state(&self, phase: &Phase) -> State {
        let mut scratch = self.basis.scratch();
        let n = self.basis.len();
        let mut vel = vec![0.0; n];
        self.basis.synthesize_into(&phase.vel, &mut vel, &mut scratch);
        State {
            pos: Field::new(phase.u.clone()),
            vel: Field::new(vel),
        }
    }

    /// Physical velocity of a phase.
    pub fn velocity(&self, phase: &Phase, out: &mut [f64], scratch: &mut Scratch) {
        self.basis.synthesize_into(&phase.vel, out, scratch);
    }

    /// Recomputes `u`, `f(u)` and the potential from the modal displacement.
    fn refresh(&self, p: &mut Phase) {
        self.basis.synthesize_into(&p.pos, &mut p.u, &mut p.scratch);
        p.potential = apply_nonlinearity(&p.u, self.params.m, &mut p.buf);
        if self.integ.nonlinear {
            self.basis.analyze_into(&p.buf, &mut p.nl, &mut p.scratch);
        } else {
            p.nl.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn half_kick(&self, p: &mut Phase, forcing: Forcing) {
        let c = 0.5 * self.integ.dt;
        match forcing {
            Forcing::WithH => {
                for ((v, f), h) in p.vel.iter_mut().zip(&p.nl).zip(&self.h_modes) {
                    *v += c * (h - f);
                }
            }
            Forcing::NoH => {
                for (v, f) in p.vel.iter_mut().zip(&p.nl) {
                    *v -= c * f;
                }
            }
        }
    }

    fn linear_flow(&self, p: &mut Phase) {
        for ((a, b), m) in p.pos.iter_mut().zip(p.vel.iter_mut()).zip(&self.integ.flows) {
            let (a0, b0) = (*a, *b);
            *a = m[0] * a0 + m[1] * b0;
            *b = m[2] * a0 + m[3] * b0;
        }
    }

    fn deterministic(&self, p: &mut Phase, forcing: Forcing) {
        self.half_kick(p, forcing);
        self.linear_flow(p);
        self.refresh(p);
        self.half_kick(p, forcing);
    }

    fn finish(&self, p: &mut Phase) -> Result<()> {
        p.step += 1;
        if p.is_finite() {
            Ok(())
        } else {
            Err(Error::BlowUp {
                system: p.label.to_string(),
                step: p.step,
                t: p.t(),
            })
        }
    }

    /// Deterministic part of a primal step (kicks, linear flow, kicks) without
    /// noise and without advancing the step counter. Used by the energy-identity
    /// bookkeeping, which needs the state just before the noise is added.
    pub fn advance_deterministic(&self, p: &mut Phase) {
        self.deterministic(p, Forcing::WithH);
    }

    /// Adds a noise increment (first `K` modes) to the velocity and closes the step.
    pub fn apply_noise(&self, p: &mut Phase, inc: &NoiseIncrement) -> Result<()> {
        for (v, d) in p.vel.iter_mut().zip(&inc.per_mode) {
            *v += d;
        }
        self.finish(p)
    }

    /// One step of the primal equation.
    pub fn step_primal(&self, p: &mut Phase, inc: &NoiseIncrement) -> Result<()> {
        self.advance_deterministic(p);
        self.apply_noise(p, inc)
    }

    /// One step of the primal equation without noise (forcing `h` kept).
    pub fn step_noiseless(&self, p: &mut Phase) -> Result<()> {
        self.deterministic(p, Forcing::WithH);
        self.finish(p)
    }

    /// Replaces the first `n` modes of `v`'s nonlinear term with those of the
    /// driver, so the next kick uses `f(v) + P_N(f(u) - f(v))`. Returns
    /// `||P_N(f(u) - f(v))||^2` computed before the replacement.
    pub fn couple_auxiliary(&self, v: &mut Phase, driver: &Phase, n: usize) -> Result<f64> {
        if n > self.basis.len() {
            return Err(Error::Argument(format!(
                "projection rank {n} exceeds grid size {}",
                self.basis.len()
            )));
        }
        let gap: f64 = driver.nl[..n]
            .iter()
            .zip(&v.nl[..n])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        v.nl[..n].copy_from_slice(&driver.nl[..n]);
        Ok(gap)
    }

    /// One step of the auxiliary equation. `driver` must already have been
    /// advanced by the same step, and `v` must have been coupled to the
    /// driver at the previous time (see [`Self::couple_auxiliary`]).
    /// Returns the coupling gap at the new time.
    pub fn step_auxiliary(
        &self,
        v: &mut Phase,
        driver: &Phase,
        inc: &NoiseIncrement,
        n: usize,
    ) -> Result<f64> {
        if driver.step != v.step + 1 {
            return Err(Error::Argument("auxiliary driver must be one step ahead".into()));
        }
        self.half_kick(v, Forcing::WithH);
        self.linear_flow(v);
        self.refresh(v);
        let gap = self.couple_auxiliary(v, driver, n)?;
        self.half_kick(v, Forcing::WithH);
        self.apply_noise(v, inc)?;
        Ok(gap)
    }

    /// Restores `v`'s own nonlinear term after coupling, so it can be stepped
    /// as an independent system.
    pub fn decouple_auxiliary(&self, v: &mut Phase) {
        self.refresh(v);
    }

    /// One Strang step of a linear modal system `a'' + A a + gamma a' = -g`
    /// with the forcing supplied at both ends of the step.
    pub fn step_linear_forced(&self, pos: &mut [f64], vel: &mut [f64], g_start: &[f64], g_end: &[f64]) {
        let c = 0.5 * self.integ.dt;
        for (v, g) in vel.iter_mut().zip(g_start) {
            *v -= c * g;
        }
        for ((a, b), m) in pos.iter_mut().zip(vel.iter_mut()).zip(&self.integ.flows) {
            let (a0, b0) = (*a, *b);
            *a = m[0] * a0 + m[1] * b0;
            *b = m[2] * a0 + m[3] * b0;
        }
        for (v, g) in vel.iter_mut().zip(g_end) {
            *v -= c * g;
        }
    }

    /// One step of `z'' + A z + gamma z' + f(z) = 0`.
    pub fn step_truncated(&self, p: &mut Phase) -> Result<()> {
        self.deterministic(p, Forcing::NoH);
        self.finish(p)
    }

    /// One step of `u'' + A u + gamma u' + f(u) = g'` with the control rate
    /// given in modal coefficients; the kick adds `dt * g'`.
    pub fn step_controlled(&self, p: &mut Phase, g_dot_modes: &[f64]) -> Result<()> {
        check_len(self.basis.len(), g_dot_modes.len())?;
        self.deterministic(p, Forcing::NoH);
        let dt = self.integ.dt;
        for (v, g) in p.vel.iter_mut().zip(g_dot_modes) {
            *v += dt * g;
        }
        self.finish(p)
    }
}

/// State-level wrapper around [`Dynamics::step_primal`].
pub fn step_primal(state: &State, dynamics: &Dynamics, model: &NoiseModel, inc: &NoiseIncrement) -> Result<State> {
    check_len(model.modes(), inc.per_mode.len())?;
    let mut p = dynamics.phase(state)?;
    dynamics.step_primal(&mut p, inc)?;
    Ok(dynamics.state(&p))
}

/// State-level wrapper around [`Dynamics::step_truncated`].
pub fn step_truncated(state: &State, dynamics: &Dynamics) -> Result<State> {
    let mut p = dynamics.phase(state)?;
    dynamics.step_truncated(&mut p)?;
    Ok(dynamics.state(&p))
}

/// State-level wrapper around [`Dynamics::step_controlled`] taking a physical control rate.
pub fn step_controlled(state: &State, dynamics: &Dynamics, g_dot: &[f64]) -> Result<State> {
    let g = dynamics.basis.analyze(g_dot)?;
    let mut p = dynamics.phase(state)?;
    dynamics.step_controlled(&mut p, &g)?;
    Ok(dynamics.state(&p))
}

/// Which evolution law [`run_trajectory`] integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    /// Forcing `h` plus the noise of the model.
    Primal,
    /// Forcing `h`, no noise.
    Noiseless,
    /// No forcing, no noise.
    Truncated,
}

/// Read-only callback invoked at `t = 0` and after every step.
pub trait Observer {
    fn observe(&mut self, dynamics: &Dynamics, phase: &Phase) -> Result<()>;
}

impl<F: FnMut(&Dynamics, &Phase) -> Result<()>> Observer for F {
    fn observe(&mut self, dynamics: &Dynamics, phase: &Phase) -> Result<()> {
        self(dynamics, phase)
    }
}

/// Outcome of [`run_trajectory`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub final_phase: Phase,
    pub steps: u64,
}

/// Number of steps covering `[0, t_end]`; `t_end` must be a multiple of `dt`.
pub fn steps_for(t_end: f64, dt: f64) -> Result<u64> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Argument(format!("horizon must be nonnegative, got {t_end}")));
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::Argument(format!(
            "horizon {t_end} is not a multiple of dt = {dt}"
        )));
    }
    Ok(n as u64)
}

/// Integrates one path from `initial` up to `t_end`.
pub fn run_trajectory(
    initial: &State,
    dynamics: &Dynamics,
    system: System,
    model: &NoiseModel,
    path: u64,
    t_end: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    let phase = dynamics.phase(initial)?;
    continue_trajectory(phase, dynamics, system, model, path, t_end, observers)
}

/// Continues a path from an existing phase (its step counter fixes the noise position).
pub fn continue_trajectory(
    mut phase: Phase,
    dynamics: &Dynamics,
    system: System,
    model: &NoiseModel,
    path: u64,
    t_end: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    let total = steps_for(t_end, dynamics.dt())?;
    let start = phase.step();
    let mut stream = model.stream(path);
    stream.seek(start);
    let mut inc = NoiseIncrement::zeros(model.modes(), dynamics.dt());
    if start == 0 {
        for obs in observers.iter_mut() {
            obs.observe(dynamics, &phase)?;
        }
    }
    for _ in start..total {
        match system {
            System::Primal => {
                model.fill_increment(dynamics.dt(), &mut stream, &mut inc);
                dynamics.step_primal(&mut phase, &inc)?;
            }
            System::Noiseless => dynamics.step_noiseless(&mut phase)?,
            System::Truncated => dynamics.step_truncated(&mut phase)?,
        }
        for obs in observers.iter_mut() {
            obs.observe(dynamics, &phase)?;
        }
    }
    Ok(Trajectory {
        steps: phase.step() - start,
        final_phase: phase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::CoeffSpec;

    fn setup(n: usize, dt: f64) -> (Arc<SineBasis>, Dynamics) {
        let grid = GridSpec::new(40.0, n).unwrap();
        let basis = Arc::new(SineBasis::new(&grid));
        let params = PhysParams::defaults(&basis).unwrap();
        let dynamics = Dynamics::new(basis.clone(), params, dt).unwrap();
        (basis, dynamics)
    }

    #[test]
    fn nonlinearity_values() {
        let f = nonlinearity(&[0.0, 1.0, -1.0, 2.0], 0.5);
        assert_eq!(f.values(), &[0.0, 1.0, -1.0, 4.0]);
        let g = nonlinearity(&[0.0, -3.0], 0.3);
        assert_eq!(g[0], 0.0);
        assert!((g[1] + 3f64.powf(1.6)).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        let h = Field::zeros(8);
        assert!(PhysParams::new(0.5, 1.5, 0.1, h.clone()).is_err());
        assert!(PhysParams::new(0.5, 0.5, 0.2, h.clone()).is_err());
        assert!(PhysParams::new(-1.0, 0.5, 0.1, h.clone()).is_err());
        let p = PhysParams::with_default_alpha(0.5, 0.5, h).unwrap();
        assert_eq!(p.alpha, 0.125);
        assert!(p.quadratic_form_margin() > 0.0);
        let mut rng = SimRng::new(1, 0);
        let eig: Vec<f64> = (1..50).map(|k| 1.0 + (k as f64 * 0.1).powi(2)).collect();
        assert!(p.quadratic_form_probe(&eig, 200, &mut rng) <= 0.0);
    }

    #[test]
    fn flows_match_closed_form() {
        for (lambda, gamma) in [(2.0, 0.5), (1.0, 0.0), (0.04, 1.0), (0.25, 1.0)] {
            let m = mode_flow(lambda, gamma, 0.3);
            let mm = {
                let a = mode_flow(lambda, gamma, 0.15);
                [
                    a[0] * a[0] + a[1] * a[2],
                    a[0] * a[1] + a[1] * a[3],
                    a[2] * a[0] + a[3] * a[2],
                    a[2] * a[1] + a[3] * a[3],
                ]
            };
            for i in 0..4 {
                assert!((m[i] - mm[i]).abs() < 1e-12, "semigroup property");
            }
            // derivative at zero reproduces the generator
            let d = mode_flow(lambda, gamma, 1e-7);
            assert!(((d[2]) / 1e-7 + lambda).abs() < 1e-5);
            assert!(((d[3] - 1.0) / 1e-7 + gamma).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_state_is_equilibrium_without_forcing() {
        let (basis, dynamics) = setup(63, 0.01);
        let mut p = dynamics.phase(&State::zeros(basis.grid())).unwrap();
        for _ in 0..10 {
            dynamics.step_truncated(&mut p).unwrap();
        }
        assert!(p.pos_modes().iter().chain(p.vel_modes()).all(|x| *x == 0.0));
    }

    #[test]
    fn truncated_matches_primal_without_h_and_noise() {
        let (basis, dynamics) = setup(63, 0.01);
        let params = dynamics.params().with_forcing(basis.grid().zeros());
        let dynamics = Dynamics::new(basis.clone(), params, 0.01).unwrap();
        let grid = *basis.grid();
        let init = State {
            pos: grid.sample(|x| (-x * x / 4.0).exp()),
            vel: grid.sample(|x| x * (-x * x / 4.0).exp()),
        };
        let mut a = dynamics.phase(&init).unwrap();
        let mut b = a.clone();
        let zero = NoiseIncrement::zeros(63, 0.01);
        for _ in 0..50 {
            dynamics.step_primal(&mut a, &zero).unwrap();
            dynamics.step_truncated(&mut b).unwrap();
        }
        assert_eq!(a.pos_modes(), b.pos_modes());
        assert_eq!(a.vel_modes(), b.vel_modes());
    }

    #[test]
    fn auxiliary_with_rank_zero_is_primal() {
        let (basis, dynamics) = setup(63, 0.01);
        let grid = *basis.grid();
        let spec = CoeffSpec::PowerLaw {
            b0: 0.5,
            q: 3.5,
            modes: 63,
            n_forced: 8,
        };
        let model = NoiseModel::with_basis(basis.clone(), &spec, 11).unwrap();
        let u0 = State {
            pos: grid.sample(|x| (-x * x).exp()),
            vel: grid.zeros(),
        };
        let v0 = State {
            pos: grid.sample(|x| 0.5 * (-(x - 1.0) * (x - 1.0)).exp()),
            vel: grid.zeros(),
        };
        let mut u = dynamics.phase(&u0).unwrap();
        let mut v = dynamics.phase(&v0).unwrap();
        let mut w = v.clone();
        let mut stream = model.stream(0);
        for _ in 0..40 {
            let inc = model.sample_increment(0.01, &mut stream).unwrap();
            dynamics.step_primal(&mut u, &inc).unwrap();
            dynamics.step_auxiliary(&mut v, &u, &inc, 0).unwrap();
            dynamics.step_primal(&mut w, &inc).unwrap();
        }
        assert_eq!(v.pos_modes(), w.pos_modes());
        assert_eq!(v.vel_modes(), w.vel_modes());
    }

    #[test]
    fn steps_for_checks_multiples() {
        assert_eq!(steps_for(1.0, 0.002).unwrap(), 500);
        assert_eq!(steps_for(0.0, 0.002).unwrap(), 0);
        assert!(steps_for(1.0005, 0.002).is_err());
        assert!(steps_for(-1.0, 0.002).is_err());
    }
}
