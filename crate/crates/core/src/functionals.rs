//! Energy functionals, their time integrals, and martingale bookkeeping.
//!
//! With `z = u_t + alpha u`:
//! `|xi|_H^2 = ||u||_1^2 + ||z||^2`, `|xi|_psi^2 = ||psi u||^2 + ||psi u_x||^2 + ||psi z||^2`,
//! `E = |xi|_H^2 + (1/(m+1)) int |u|^(2m+2)` and
//! `E^psi = E + |xi|_psi^2 + (1/(m+1)) int psi^2 |u|^(2m+2)`.
//! Weighted derivative terms use `psi` at the cell-edge midpoints.

use serde::{Deserialize, Serialize};

use crate::dynamics::{nonlinearity, Dynamics, Observer, Phase, PhysParams};
use crate::error::{check_len, Error, Result};
use crate::grid::{dot, forward_diff, h1_sq, Field, GridSpec, State, WeightSample, WeightTables};
use crate::noise::{NoiseIncrement, NoiseModel};
use crate::spectral::Scratch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySnapshot {
    pub t: f64,
    pub xi_h_sq: f64,
    pub xi_psi_sq: f64,
    pub e: f64,
    pub e_psi: f64,
}

/// `V = E + 1`.
pub fn lyapunov_v(snap: &EnergySnapshot) -> f64 {
    snap.e + 1.0
}

/// `int |u|^(2m+2)` by grid quadrature, optionally weighted by `psi^2`.
fn potential(u: &[f64], m: f64, psi: Option<&[f64]>, dx: f64) -> f64 {
    let e = 2.0 * m + 2.0;
    let pow = |x: f64| {
        if m == 0.5 {
            x * x * x.abs()
        } else {
            x.abs().powf(e)
        }
    };
    let s: f64 = match psi {
        None => u.iter().map(|&x| pow(x)).sum(),
        Some(p) => u.iter().zip(p).map(|(&x, w)| w * w * pow(x)).sum(),
    };
    s * dx
}

/// `||psi u||^2 + ||psi_e Du||^2 + ||psi z||^2`.
fn weighted_norm(u: &[f64], du: &[f64], z: &[f64], w: &WeightSample, dx: f64) -> f64 {
    let a: f64 = u.iter().zip(&w.psi).map(|(x, p)| (p * x).powi(2)).sum();
    let b: f64 = du.iter().zip(&w.psi_edge).map(|(x, p)| (p * x).powi(2)).sum();
    let c: f64 = z.iter().zip(&w.psi).map(|(x, p)| (p * x).powi(2)).sum();
    (a + b + c) * dx
}

/// Snapshot of a physical state at time `t`.
pub fn snapshot(
    state: &State,
    t: f64,
    params: &PhysParams,
    weights: &WeightTables,
) -> Result<EnergySnapshot> {
    let grid = weights.grid();
    grid.check(&state.pos)?;
    grid.check(&state.vel)?;
    let dx = grid.dx();
    let z: Vec<f64> = state
        .vel
        .iter()
        .zip(state.pos.iter())
        .map(|(v, u)| v + params.alpha * u)
        .collect();
    let xi_h_sq = h1_sq(&state.pos, grid)? + dot(&z, &z) * dx;
    let e = xi_h_sq + potential(&state.pos, params.m, None, dx) / (params.m + 1.0);
    let w = weights.sample(t)?;
    let du = forward_diff(&state.pos, grid)?;
    let xi_psi_sq = weighted_norm(&state.pos, &du, &z, &w, dx);
    let e_psi = e + xi_psi_sq + potential(&state.pos, params.m, Some(&w.psi), dx) / (params.m + 1.0);
    Ok(EnergySnapshot {
        t,
        xi_h_sq,
        xi_psi_sq,
        e,
        e_psi,
    })
}

/// Computes snapshots of phases, reusing buffers.
#[derive(Debug, Clone)]
pub struct Snapshotter {
    weights: WeightTables,
    scratch: Scratch,
    vel: Vec<f64>,
    z: Vec<f64>,
}

impl Snapshotter {
    pub fn new(dynamics: &Dynamics) -> Self {
        let n = dynamics.grid().n();
        Self {
            weights: WeightTables::new(dynamics.grid()),
            scratch: dynamics.basis().scratch(),
            vel: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    pub fn weights(&self) -> &WeightTables {
        &self.weights
    }

    /// Unweighted part only (`xi_psi_sq` and `e_psi` set to NaN).
    pub fn unweighted(&self, dynamics: &Dynamics, phase: &Phase) -> EnergySnapshot {
        let p = dynamics.params();
        let xi_h_sq = phase.h_norm_sq(dynamics.basis().eigenvalues(), p.alpha);
        let e = xi_h_sq + phase.potential_sum() * dynamics.grid().dx() / (p.m + 1.0);
        EnergySnapshot {
            t: phase.t(),
            xi_h_sq,
            xi_psi_sq: f64::NAN,
            e,
            e_psi: f64::NAN,
        }
    }

    pub fn full(&mut self, dynamics: &Dynamics, phase: &Phase) -> Result<EnergySnapshot> {
        let mut snap = self.unweighted(dynamics, phase);
        let p = dynamics.params();
        let grid = dynamics.grid();
        let dx = grid.dx();
        dynamics.velocity(phase, &mut self.vel, &mut self.scratch);
        let u = phase.u();
        for ((z, v), x) in self.z.iter_mut().zip(&self.vel).zip(u) {
            *z = v + p.alpha * x;
        }
        let w = self.weights.sample(phase.t())?;
        let du = forward_diff(u, grid)?;
        snap.xi_psi_sq = weighted_norm(u, &du, &self.z, &w, dx);
        snap.e_psi = snap.e + snap.xi_psi_sq + potential(u, p.m, Some(&w.psi), dx) / (p.m + 1.0);
        Ok(snap)
    }
}

/// Running time integrals and the composite functionals built from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accumulators {
    pub p: f64,
    pub alpha: f64,
    pub int_e: f64,
    pub int_e_psi: f64,
    pub int_e_p: f64,
    pub int_e_psi_p: f64,
    pub f: f64,
    pub f_psi: f64,
    pub f_p: f64,
    pub f_psi_p: f64,
}

impl Accumulators {
    /// Values at the first snapshot (all integrals zero).
    pub fn start(snap: &EnergySnapshot, alpha: f64, p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::Argument(format!("p must be at least 1, got {p}")));
        }
        let mut acc = Self {
            p,
            alpha,
            int_e: 0.0,
            int_e_psi: 0.0,
            int_e_p: 0.0,
            int_e_psi_p: 0.0,
            f: 0.0,
            f_psi: 0.0,
            f_p: 0.0,
            f_psi_p: 0.0,
        };
        acc.recompose(snap);
        Ok(acc)
    }

    fn recompose(&mut self, s: &EnergySnapshot) {
        let (a, p) = (self.alpha, self.p);
        self.f = s.e + a * self.int_e;
        self.f_psi = s.e_psi + a * self.int_e_psi;
        self.f_p = s.e.powf(p) + a * p * self.int_e_p;
        self.f_psi_p = s.e_psi.powf(p) + a * p * self.int_e_psi_p;
    }
}

/// Trapezoidal update of every running integral from `prev` to `next`.
pub fn accumulate(acc: &Accumulators, prev: &EnergySnapshot, next: &EnergySnapshot) -> Accumulators {
    let h = 0.5 * (next.t - prev.t);
    let p = acc.p;
    let mut out = *acc;
    out.int_e += h * (prev.e + next.e);
    out.int_e_psi += h * (prev.e_psi + next.e_psi);
    out.int_e_p += h * (prev.e.powf(p) + next.e.powf(p));
    out.int_e_psi_p += h * (prev.e_psi.powf(p) + next.e_psi.powf(p));
    out.recompose(next);
    out
}

/// Series of snapshots and accumulators sampled every `every` steps.
#[derive(Debug, Clone)]
pub struct FunctionalRecorder {
    every: u64,
    weighted: bool,
    p: f64,
    snapper: Snapshotter,
    pub snapshots: Vec<EnergySnapshot>,
    pub accumulators: Vec<Accumulators>,
}

impl FunctionalRecorder {
    pub fn new(dynamics: &Dynamics, every: u64, weighted: bool, p: f64) -> Self {
        Self {
            every: every.max(1),
            weighted,
            p,
            snapper: Snapshotter::new(dynamics),
            snapshots: Vec::new(),
            accumulators: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<(&EnergySnapshot, &Accumulators)> {
        Some((self.snapshots.last()?, self.accumulators.last()?))
    }

    /// Records a phase regardless of the sampling interval.
    pub fn record(&mut self, dynamics: &Dynamics, phase: &Phase) -> Result<()> {
        let mut snap = if self.weighted {
            self.snapper.full(dynamics, phase)?
        } else {
            self.snapper.unweighted(dynamics, phase)
        };
        if !self.weighted {
            // keeps the weighted accumulators finite and equal to the plain ones
            snap.e_psi = snap.e;
            snap.xi_psi_sq = 0.0;
        }
        let acc = match (self.snapshots.last(), self.accumulators.last()) {
            (Some(prev), Some(acc)) => accumulate(acc, prev, &snap),
            _ => Accumulators::start(&snap, dynamics.params().alpha, self.p)?,
        };
        self.snapshots.push(snap);
        self.accumulators.push(acc);
        Ok(())
    }
}

impl Observer for FunctionalRecorder {
    fn observe(&mut self, dynamics: &Dynamics, phase: &Phase) -> Result<()> {
        if phase.step().is_multiple_of(self.every) {
            self.record(dynamics, phase)?;
        }
        Ok(())
    }
}

/// Martingales `M = 2 int (z, dW)`, `M^psi = 2 int (psi^2 z, dW)` and their
/// quadratic variations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTracker {
    pub m: f64,
    pub m_psi: f64,
    pub qv: f64,
    pub qv_psi: f64,
    /// Sum of realized `||dW||^2`.
    pub noise_sq: f64,
    /// Per-step `(dM, dM^psi, dQV, dQV^psi)` when recording is enabled.
    pub increments: Option<Vec<[f64; 4]>>,
}

impl MartingaleTracker {
    pub fn recording() -> Self {
        Self {
            increments: Some(Vec::new()),
            ..Self::default()
        }
    }

    fn push(&mut self, d: [f64; 4], noise_sq: f64) {
        self.m += d[0];
        self.m_psi += d[1];
        self.qv += d[2];
        self.qv_psi += d[3];
        self.noise_sq += noise_sq;
        if let Some(v) = self.increments.as_mut() {
            v.push(d);
        }
    }

    /// Unweighted update from modal `z` coefficients: by orthonormality
    /// `(z, dW) = sum_k z_k dW_k` and `(z, e_k) = z_k`.
    pub fn update_modal(&mut self, z_modes: &[f64], inc: &NoiseIncrement, coeffs: &[f64]) {
        let dm = 2.0 * dot(&z_modes[..inc.per_mode.len()], &inc.per_mode);
        let dqv = 4.0 * inc.dt
            * coeffs
                .iter()
                .zip(z_modes)
                .map(|(b, z)| b * b * z * z)
                .sum::<f64>();
        self.push([dm, 0.0, dqv, 0.0], inc.norm_sq());
    }
}

/// Updates both martingales from a physical state (pre-noise at this step),
/// evaluating `psi` at time `t`. Quadratic variations use modal coefficients
/// obtained by transforms; [`qv_increment_direct`] is an independent route.
pub fn update_martingale(
    tracker: &mut MartingaleTracker,
    state: &State,
    inc: &NoiseIncrement,
    model: &NoiseModel,
    alpha: f64,
    weights: &WeightTables,
    t: f64,
) -> Result<()> {
    let grid = *model.grid();
    grid.check(&state.pos)?;
    grid.check(&state.vel)?;
    check_len(model.modes(), inc.per_mode.len())?;
    let basis = model.basis();
    let w = weights.sample(t)?;
    let z: Vec<f64> = state
        .vel
        .iter()
        .zip(state.pos.iter())
        .map(|(v, u)| v + alpha * u)
        .collect();
    let psi2z: Vec<f64> = z.iter().zip(&w.psi).map(|(z, p)| p * p * z).collect();
    let mut scratch = basis.scratch();
    let mut zc = vec![0.0; grid.n()];
    let mut pc = vec![0.0; grid.n()];
    basis.analyze_into(&z, &mut zc, &mut scratch);
    basis.analyze_into(&psi2z, &mut pc, &mut scratch);
    let dw = inc.field(model);
    let dx = grid.dx();
    let dm = 2.0 * dot(&z, &dw) * dx;
    let dm_psi = 2.0 * dot(&psi2z, &dw) * dx;
    let qv_sum = |c: &[f64]| -> f64 {
        model
            .coeffs()
            .iter()
            .zip(c)
            .map(|(b, c)| b * b * c * c)
            .sum()
    };
    let dqv = 4.0 * inc.dt * qv_sum(&zc);
    let dqv_psi = 4.0 * inc.dt * qv_sum(&pc);
    tracker.push([dm, dm_psi, dqv, dqv_psi], inc.norm_sq());
    Ok(())
}

/// `4 dt sum_j b_j^2 (g, e_j)^2` by direct inner products with the basis fields.
pub fn qv_increment_direct(g: &[f64], basis_fields: &[Field], coeffs: &[f64], dt: f64, grid: &GridSpec) -> Result<f64> {
    check_len(coeffs.len(), basis_fields.len())?;
    let mut s = 0.0;
    for (e, b) in basis_fields.iter().zip(coeffs) {
        let c = crate::grid::inner(g, e, grid)?;
        s += b * b * c * c;
    }
    Ok(4.0 * dt * s)
}

/// Right-hand side of the `d|xi|_H^2` identity without the noise terms:
/// `-2a||u||_1^2 + 2(a-g)||z||^2 - 2a(a-g)(u,z) + 2(z, h - f(u))`, computed modally.
pub fn h_drift(phase: &Phase, dynamics: &Dynamics) -> f64 {
    let p = dynamics.params();
    let (a, g) = (p.alpha, p.gamma);
    let lam = dynamics.basis().eigenvalues();
    let h = dynamics.h_modes();
    let nl = phase.nonlinear_modes();
    let mut u1 = 0.0;
    let mut zz = 0.0;
    let mut uz = 0.0;
    let mut zf = 0.0;
    for k in 0..lam.len() {
        let u = phase.pos_modes()[k];
        let z = phase.vel_modes()[k] + a * u;
        u1 += lam[k] * u * u;
        zz += z * z;
        uz += u * z;
        zf += z * (h[k] - nl[k]);
    }
    -2.0 * a * u1 + 2.0 * (a - g) * zz - 2.0 * a * (a - g) * uz + 2.0 * zf
}

/// Physical fields needed by the weighted identity.
struct WeightedFields {
    u: Vec<f64>,
    z: Vec<f64>,
    force: Vec<f64>,
}

fn weighted_fields(phase: &Phase, dynamics: &Dynamics, scratch: &mut Scratch) -> WeightedFields {
    let p = dynamics.params();
    let n = dynamics.grid().n();
    let mut vel = vec![0.0; n];
    dynamics.velocity(phase, &mut vel, scratch);
    let u = phase.u().to_vec();
    let z = vel.iter().zip(&u).map(|(v, x)| v + p.alpha * x).collect();
    let f = nonlinearity(&u, p.m);
    let force = p.h.iter().zip(f.iter()).map(|(h, f)| h - f).collect();
    WeightedFields { u, z, force }
}

/// `|xi|_psi^2` and the drift of the weighted identity at one time, including the
/// `psi psi_t` terms and the discrete flux term that tends to `-4 int psi psi_x z u_x`.
fn weighted_norm_and_drift(wf: &WeightedFields, w: &WeightSample, p: &PhysParams, grid: &GridSpec) -> Result<(f64, f64)> {
    let dx = grid.dx();
    let (a, g) = (p.alpha, p.gamma);
    let du = forward_diff(&wf.u, grid)?;
    let dz = forward_diff(&wf.z, grid)?;
    let psi2z: Vec<f64> = wf.z.iter().zip(&w.psi).map(|(z, s)| s * s * z).collect();
    let dpsi2z = forward_diff(&psi2z, grid)?;
    let (mut uu, mut zz, mut uz, mut zf, mut tu, mut tz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..wf.u.len() {
        let s2 = w.psi[j] * w.psi[j];
        let (u, z) = (wf.u[j], wf.z[j]);
        uu += s2 * u * u;
        zz += s2 * z * z;
        uz += s2 * u * z;
        zf += s2 * z * wf.force[j];
        let st = w.psi[j] * w.psi_t[j];
        tu += st * u * u;
        tz += st * z * z;
    }
    let (mut dd, mut flux, mut td) = (0.0, 0.0, 0.0);
    for e in 0..du.len() {
        let s2 = w.psi_edge[e] * w.psi_edge[e];
        dd += s2 * du[e] * du[e];
        flux += du[e] * (s2 * dz[e] - dpsi2z[e]);
        td += w.psi_edge[e] * w.psi_t_edge[e] * du[e] * du[e];
    }
    let norm = (uu + dd + zz) * dx;
    let drift = dx
        * (-2.0 * a * (uu + dd) + 2.0 * (a - g) * zz - 2.0 * a * (a - g) * uz
            + 2.0 * zf
            + 2.0 * flux
            + 2.0 * (tu + td + tz));
    Ok((norm, drift))
}

/// Per-step quantities of the discrete energy identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityStep {
    pub t: f64,
    pub dt: f64,
    /// `|xi|_H^2` at the start of the step, before the noise kick, and after it.
    pub h_start: f64,
    pub h_pre: f64,
    pub h_end: f64,
    /// Deterministic drift at the start of the step and at the pre-kick state.
    pub drift_start: f64,
    pub drift_pre: f64,
    pub dm: f64,
    pub noise_sq: f64,
    pub e_start: f64,
    /// Weighted analogues (`NaN` when not recorded).
    pub w_start: f64,
    pub w_pre: f64,
    pub w_end: f64,
    pub wdrift_start: f64,
    pub wdrift_pre: f64,
    pub dm_psi: f64,
    pub noise_psi_sq: f64,
}

/// Trajectory record for [`energy_identity_residual`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub steps: Vec<IdentityStep>,
    pub tracker: MartingaleTracker,
    /// `B1 = sum b_i^2` of the driving noise.
    pub b1: f64,
}

/// Steps a primal path while recording both energy identities.
pub fn record_identities(
    initial: &State,
    dynamics: &Dynamics,
    model: &NoiseModel,
    path: u64,
    steps: u64,
    weighted: bool,
) -> Result<IdentityRecord> {
    let grid = *dynamics.grid();
    let weights = WeightTables::new(&grid);
    let basis = dynamics.basis().clone();
    let mut scratch = basis.scratch();
    let mut phase = dynamics.phase(initial)?;
    let mut stream = model.stream(path);
    let dt = dynamics.dt();
    let params = dynamics.params().clone();
    let alpha = params.alpha;
    let mut tracker = MartingaleTracker::recording();
    let mut out = Vec::with_capacity(steps as usize);
    let snap = Snapshotter::new(dynamics);
    let weighted_at = |phase: &Phase, t: f64, scratch: &mut Scratch| -> Result<(f64, f64, WeightedFields)> {
        let wf = weighted_fields(phase, dynamics, scratch);
        let w = weights.sample(t)?;
        let (n, d) = weighted_norm_and_drift(&wf, &w, &params, &grid)?;
        Ok((n, d, wf))
    };
    for _ in 0..steps {
        let t = phase.t();
        let e_start = snap.unweighted(dynamics, &phase).e;
        let h_start = phase.h_norm_sq(basis.eigenvalues(), alpha);
        let drift_start = h_drift(&phase, dynamics);
        let (w_start, wdrift_start) = if weighted {
            let (n, d, _) = weighted_at(&phase, t, &mut scratch)?;
            (n, d)
        } else {
            (f64::NAN, f64::NAN)
        };
        let inc = model.sample_increment(dt, &mut stream)?;
        dynamics.advance_deterministic(&mut phase);
        let t1 = t + dt;
        let h_pre = phase.h_norm_sq(basis.eigenvalues(), alpha);
        let drift_pre = h_drift(&phase, dynamics);
        let z_modes: Vec<f64> = phase
            .pos_modes()
            .iter()
            .zip(phase.vel_modes())
            .map(|(u, v)| v + alpha * u)
            .collect();
        let (w_pre, wdrift_pre, dm_psi, noise_psi_sq, dqv_psi) = if weighted {
            let (n, d, wf) = weighted_at(&phase, t1, &mut scratch)?;
            let w = weights.sample(t1)?;
            let dw = inc.field(model);
            let dx = grid.dx();
            let psi2z: Vec<f64> = wf.z.iter().zip(&w.psi).map(|(z, p)| p * p * z).collect();
            let dm_psi = 2.0 * dot(&psi2z, &dw) * dx;
            let nps: f64 = dw.iter().zip(&w.psi).map(|(d, p)| (p * d).powi(2)).sum::<f64>() * dx;
            let mut pc = vec![0.0; grid.n()];
            basis.analyze_into(&psi2z, &mut pc, &mut scratch);
            let q: f64 = model.coeffs().iter().zip(&pc).map(|(b, c)| b * b * c * c).sum();
            (n, d, dm_psi, nps, 4.0 * dt * q)
        } else {
            (f64::NAN, f64::NAN, 0.0, f64::NAN, 0.0)
        };
        tracker.update_modal(&z_modes, &inc, model.coeffs());
        let last = tracker.increments.as_mut().and_then(|v| v.last_mut());
        if let Some(d) = last {
            d[1] = dm_psi;
            d[3] = dqv_psi;
        }
        tracker.m_psi += dm_psi;
        tracker.qv_psi += dqv_psi;
        let dm = tracker.increments.as_ref().map_or(0.0, |v| v[v.len() - 1][0]);
        dynamics.apply_noise(&mut phase, &inc)?;
        let h_end = phase.h_norm_sq(basis.eigenvalues(), alpha);
        let w_end = if weighted {
            weighted_at(&phase, t1, &mut scratch)?.0
        } else {
            f64::NAN
        };
        out.push(IdentityStep {
            t,
            dt,
            h_start,
            h_pre,
            h_end,
            drift_start,
            drift_pre,
            dm,
            noise_sq: inc.norm_sq(),
            e_start,
            w_start,
            w_pre,
            w_end,
            wdrift_start,
            wdrift_pre,
            dm_psi,
            noise_psi_sq,
        });
    }
    Ok(IdentityRecord {
        steps: out,
        tracker,
        b1: model.b1(),
    })
}

/// Residuals of the discrete identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    /// `max_n |r_n| / (1 + E_n)` for the unweighted identity with the realized `||dW||^2`.
    pub h_max: f64,
    /// Same for the weighted identity (`NaN` if not recorded).
    pub psi_max: f64,
    /// Mean over steps of the residual with `B1 dt` in place of `||dW||^2`,
    /// relative to the mean `|Delta |xi|_H^2|`.
    pub h_mean_expected_correction: f64,
}

/// Per-step residuals
/// `|Delta|xi|^2 - (dt/2)(D_start + D_pre) - dM - ||dW||^2|`
/// for the plain and the weighted identity, normalized by `1 + E`.
pub fn energy_identity_residual(record: &IdentityRecord) -> Result<IdentityResidual> {
    if record.steps.is_empty() {
        return Err(Error::IncompleteRecord("no steps recorded".into()));
    }
    if let Some(v) = &record.tracker.increments {
        check_len(record.steps.len(), v.len())
            .map_err(|_| Error::IncompleteRecord("martingale increments do not match steps".into()))?;
    }
    let mut h_max: f64 = 0.0;
    let mut psi_max: f64 = 0.0;
    let mut weighted = true;
    let (mut mean_res, mut mean_delta) = (0.0, 0.0);
    for s in &record.steps {
        let scale = 1.0 + s.e_start;
        let det = s.h_pre - s.h_start - 0.5 * s.dt * (s.drift_start + s.drift_pre);
        let r = det + (s.h_end - s.h_pre - s.dm - s.noise_sq);
        h_max = h_max.max(r.abs() / scale);
        mean_res += s.h_end - s.h_start - 0.5 * s.dt * (s.drift_start + s.drift_pre) - s.dm - record.b1 * s.dt;
        mean_delta += (s.h_end - s.h_start).abs();
        if s.w_start.is_nan() {
            weighted = false;
        } else {
            let det = s.w_pre - s.w_start - 0.5 * s.dt * (s.wdrift_start + s.wdrift_pre);
            let r = det + (s.w_end - s.w_pre - s.dm_psi - s.noise_psi_sq);
            psi_max = psi_max.max(r.abs() / scale);
        }
    }
    Ok(IdentityResidual {
        h_max,
        psi_max: if weighted { psi_max } else { f64::NAN },
        h_mean_expected_correction: if mean_delta > 0.0 {
            mean_res.abs() / mean_delta
        } else {
            0.0
        },
    })
}

/// One sample of the quantities entering the pathwise a-priori bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriSample {
    pub t: f64,
    pub e: f64,
    pub int_e: f64,
    pub m: f64,
    pub qv: f64,
    pub noise_sq: f64,
}

/// Pathwise a-priori bound
/// `E(t) - E(0) + a int E - ||h||^2 t - S(t) - (M(t) - (beta/2) <M>(t)) <= tol`,
/// where `S(t)` is the realized `sum ||dW||^2`, checked on a sampled series.
/// Returns the largest normalized excess `lhs / ((1 + E(0))(1 + t))` (nonpositive means satisfied).
pub fn apriori_path_excess(samples: &[AprioriSample], alpha: f64, beta: f64, h_norm_sq: f64) -> Result<f64> {
    let first = samples
        .first()
        .ok_or_else(|| Error::IncompleteRecord("empty series".into()))?;
    let mut worst = f64::NEG_INFINITY;
    for s in samples {
        let t = s.t - first.t;
        let lhs = s.e - first.e + alpha * (s.int_e - first.int_e)
            - h_norm_sq * t
            - (s.noise_sq - first.noise_sq)
            - ((s.m - first.m) - 0.5 * beta * (s.qv - first.qv));
        worst = worst.max(lhs / ((1.0 + first.e) * (1.0 + t)));
    }
    Ok(worst)
}

/// Steps a primal path, tracking `M`, `<M>`, the realized noise and `int E`
/// at every step, and returns samples every `every` steps.
pub fn record_apriori(
    initial: &State,
    dynamics: &Dynamics,
    model: &NoiseModel,
    path: u64,
    steps: u64,
    every: u64,
) -> Result<Vec<AprioriSample>> {
    let alpha = dynamics.params().alpha;
    let snap = Snapshotter::new(dynamics);
    let mut phase = dynamics.phase(initial)?;
    let mut stream = model.stream(path);
    let mut tracker = MartingaleTracker::default();
    let mut e_prev = snap.unweighted(dynamics, &phase).e;
    let mut int_e = 0.0;
    let dt = dynamics.dt();
    let every = every.max(1);
    let mut out = vec![AprioriSample {
        t: 0.0,
        e: e_prev,
        int_e: 0.0,
        m: 0.0,
        qv: 0.0,
        noise_sq: 0.0,
    }];
    let mut inc = NoiseIncrement::zeros(model.modes(), dt);
    for _ in 0..steps {
        model.fill_increment(dt, &mut stream, &mut inc);
        dynamics.advance_deterministic(&mut phase);
        let z: Vec<f64> = phase
            .pos_modes()
            .iter()
            .zip(phase.vel_modes())
            .map(|(u, v)| v + alpha * u)
            .collect();
        tracker.update_modal(&z, &inc, model.coeffs());
        dynamics.apply_noise(&mut phase, &inc)?;
        let e = snap.unweighted(dynamics, &phase).e;
        int_e += 0.5 * dt * (e + e_prev);
        e_prev = e;
        if phase.step() % every == 0 {
            out.push(AprioriSample {
                t: phase.t(),
                e,
                int_e,
                m: tracker.m,
                qv: tracker.qv,
                noise_sq: tracker.noise_sq,
            });
        }
    }
    Ok(out)
}
