//! Coupled runs of two primal systems and one auxiliary system driven by the
//! same noise, together with stopping times, Foias-Prodi fits and the
//! Girsanov drift diagnostics.

use serde::{Deserialize, Serialize};

use crate::dynamics::{nonlinearity, steps_for, Dynamics, Phase};
use crate::error::{Error, Result};
use crate::functionals::{accumulate, Accumulators, EnergySnapshot, Snapshotter};
use crate::grid::{h1_sq, Field, State};
use crate::noise::{NoiseIncrement, NoiseModel};

/// Thresholds of `tau_p = inf{t : F^{psi,p}(t) >= M E^p(0) + (K + L) t + rho}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingConfig {
    pub m_c: f64,
    pub k_c: f64,
    pub l_c: f64,
    pub rho: f64,
    pub p: f64,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            m_c: 1.0,
            k_c: 1.0,
            l_c: 0.05,
            rho: 5.0,
            p: 1.0,
        }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m_c", self.m_c), ("k_c", self.k_c), ("l_c", self.l_c), ("rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("stopping constant {name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.p >= 1.0) {
            return Err(Error::Config(format!("stopping exponent p must be at least 1, got {}", self.p)));
        }
        Ok(())
    }

    pub fn threshold(&self, e0: f64, t: f64) -> f64 {
        self.m_c * e0.powf(self.p) + (self.k_c + self.l_c) * t + self.rho
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..*self }
    }
}

/// Constants of the squeezing detector `|xi_u - xi_u'|_H >= C (t+1)^(-p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaConfig {
    pub c_sigma: f64,
    pub p_sigma: f64,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        Self {
            c_sigma: 1.0,
            p_sigma: 2.0,
        }
    }
}

/// First sampled crossing of the stopping threshold, attributed to the left
/// endpoint of the sampling interval in which it is detected.
/// `series` holds `(t, F^{psi,p}(t))`; `e0` is `E(0)`.
pub fn detect_stopping(series: &[(f64, f64)], e0: f64, cfg: &StoppingConfig) -> Option<f64> {
    let j = series.iter().position(|&(t, f)| f >= cfg.threshold(e0, t))?;
    Some(if j == 0 { series[0].0 } else { series[j - 1].0 })
}

/// First sampled time with `distance >= c (t+1)^(-p)`; `series` holds `(t, |xi_u - xi_u'|_H)`.
pub fn detect_squeezing(series: &[(f64, f64)], cfg: &SigmaConfig) -> Option<f64> {
    series
        .iter()
        .find(|&&(t, d)| d >= cfg.c_sigma * (t + 1.0).powf(-cfg.p_sigma))
        .map(|s| s.0)
}

/// Online stopping-time detection for one system over several `p`.
#[derive(Debug, Clone)]
pub struct StopDetector {
    cfgs: Vec<StoppingConfig>,
    accs: Vec<Accumulators>,
    prev: Option<EnergySnapshot>,
    prev_t: f64,
    e0: f64,
    fired: Vec<Option<f64>>,
}

impl StopDetector {
    pub fn new(cfgs: &[StoppingConfig]) -> Self {
        Self {
            cfgs: cfgs.to_vec(),
            accs: Vec::new(),
            prev: None,
            prev_t: 0.0,
            e0: 0.0,
            fired: vec![None; cfgs.len()],
        }
    }

    /// Feeds the next snapshot; returns true if a threshold was crossed for the first time.
    pub fn observe(&mut self, snap: &EnergySnapshot, alpha: f64) -> Result<bool> {
        match self.prev {
            None => {
                self.e0 = snap.e;
                self.accs = self
                    .cfgs
                    .iter()
                    .map(|c| Accumulators::start(snap, alpha, c.p))
                    .collect::<Result<_>>()?;
            }
            Some(prev) => {
                for acc in self.accs.iter_mut() {
                    *acc = accumulate(acc, &prev, snap);
                }
            }
        }
        let mut newly = false;
        for (i, c) in self.cfgs.iter().enumerate() {
            if self.fired[i].is_none() && self.accs[i].f_psi_p >= c.threshold(self.e0, snap.t) {
                self.fired[i] = Some(if self.prev.is_some() { self.prev_t } else { snap.t });
                newly = true;
            }
        }
        self.prev_t = snap.t;
        self.prev = Some(*snap);
        Ok(newly)
    }

    pub fn fired(&self) -> &[Option<f64>] {
        &self.fired
    }

    /// Minimum over the configured `p`.
    pub fn tau(&self) -> Option<f64> {
        self.fired.iter().flatten().copied().reduce(f64::min)
    }

    pub fn accumulators(&self) -> &[Accumulators] {
        &self.accs
    }
}

/// Settings of [`run_coupled`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledConfig {
    /// Projection rank `N` of the auxiliary system.
    pub rank: usize,
    pub t_end: f64,
    /// Sampling interval in steps.
    pub every: u64,
    /// Stopping rules applied to each system; empty disables truncation.
    pub stopping: Vec<StoppingConfig>,
    pub sigma: SigmaConfig,
    /// Also integrate the second primal system `u'`.
    pub track_prime: bool,
    /// Record `||psi u||_1^2`, `||psi v||_1^2` and weighted energies.
    pub weighted: bool,
}

impl Default for CoupledConfig {
    fn default() -> Self {
        Self {
            rank: 64,
            t_end: 30.0,
            every: 10,
            stopping: Vec::new(),
            sigma: SigmaConfig::default(),
            track_prime: true,
            weighted: true,
        }
    }
}

/// One sampled time of a coupled run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledSample {
    pub t: f64,
    /// `|xi_u - xi_v|_H^2`
    pub w_sq: f64,
    /// `|xi_u - xi_u'|_H^2` (`NaN` when `u'` is not tracked)
    pub prime_sq: f64,
    pub u_h_sq: f64,
    pub prime_h_sq: f64,
    /// `||u||_1^2`, `||v||_1^2`
    pub u1: f64,
    pub v1: f64,
    /// `||psi u||_1^2`, `||psi v||_1^2` (`NaN` unless weighted)
    pub psi_u1: f64,
    pub psi_v1: f64,
    /// `||P_N(f(u) - f(v))||^2` and its running time integral.
    pub drift_sq: f64,
    pub drift_cum: f64,
    pub active: bool,
}

/// Record of a coupled run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledRun {
    pub rank: usize,
    pub path: u64,
    pub dt: f64,
    pub samples: Vec<CoupledSample>,
    /// `tau = tau^v ^ tau^u ^ tau^u'`
    pub tau: Option<f64>,
    /// Stopping times per system in the order `u`, `u'`, `v`.
    pub tau_by_system: [Option<f64>; 3],
    /// First squeezing-envelope violation of `|xi_u - xi_u'|_H`.
    pub theta: Option<f64>,
    /// Checksums of the increments consumed by `u`, `u'`, `v`.
    pub checksums: [u64; 3],
    /// Largest `F^{psi,p}(t) / F^{psi,p}(tau)` over `t >= tau` and over the systems.
    pub post_tau_ratio: Option<f64>,
    pub drift_total: f64,
}

impl CoupledRun {
    pub fn sigma(&self) -> Option<f64> {
        match (self.tau, self.theta) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// `|xi_u - xi_v|_H` at the last sample with `t <= time`.
    pub fn w_at(&self, time: f64) -> Option<f64> {
        self.samples
            .iter()
            .rev()
            .find(|s| s.t <= time + 1e-9)
            .map(|s| s.w_sq.sqrt())
    }

    /// Cumulative drift integral at the last sample with `t <= time`.
    pub fn drift_at(&self, time: f64) -> Option<f64> {
        self.samples
            .iter()
            .rev()
            .find(|s| s.t <= time + 1e-9)
            .map(|s| s.drift_cum)
    }

    /// Least-squares slope of `ln |xi_w|_H` against `t` over samples with `t >= from`
    /// and `|xi_w|_H` above `floor`.
    pub fn decay_exponent(&self, from: f64, floor: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|s| s.t >= from && s.w_sq.sqrt() > floor)
            .map(|s| (s.t, 0.5 * s.w_sq.ln()))
            .collect();
        least_squares_slope(&pts)
    }
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// `|xi_a - xi_b|_H^2` from modal coefficients.
fn modal_distance_sq(a: &Phase, b: &Phase, eig: &[f64], alpha: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..eig.len() {
        let du = a.pos_modes()[k] - b.pos_modes()[k];
        let dz = a.vel_modes()[k] - b.vel_modes()[k] + alpha * du;
        s += eig[k] * du * du + dz * dz;
    }
    s
}

fn h1_modal(p: &Phase, eig: &[f64]) -> f64 {
    p.pos_modes().iter().zip(eig).map(|(a, l)| l * a * a).sum()
}

fn fold_checksum(h: u64, c: u64) -> u64 {
    (h.rotate_left(5) ^ c).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Advances `(u, u', v)` with shared increments. Before the composite stopping
/// time all systems follow their stochastic laws; once any stopping rule fires,
/// every system continues with the noise- and forcing-free truncated dynamics and
/// the Girsanov drift is switched off.
pub fn run_coupled(
    y0: &State,
    y0_prime: &State,
    dynamics: &Dynamics,
    model: &NoiseModel,
    path: u64,
    cfg: &CoupledConfig,
) -> Result<CoupledRun> {
    let n_rank = cfg.rank;
    if n_rank > model.modes() {
        return Err(Error::Argument(format!(
            "projection rank {n_rank} exceeds the {} noise modes",
            model.modes()
        )));
    }
    for s in &cfg.stopping {
        s.validate()?;
    }
    let steps = steps_for(cfg.t_end, dynamics.dt())?;
    let every = cfg.every.max(1);
    let alpha = dynamics.params().alpha;
    let eig = dynamics.basis().eigenvalues().to_vec();
    let grid = *dynamics.grid();
    let dt = dynamics.dt();

    let mut u = dynamics.phase(y0)?;
    let mut up = dynamics.phase(y0_prime)?;
    up.set_label("u'");
    let mut v = up.clone();
    v.set_label("v");
    let mut gap = dynamics.couple_auxiliary(&mut v, &u, n_rank)?;

    let mut snapper = Snapshotter::new(dynamics);
    let mut detectors: Vec<StopDetector> = (0..3).map(|_| StopDetector::new(&cfg.stopping)).collect();
    let truncating = !cfg.stopping.is_empty();
    let mut active = true;
    let mut tau: Option<f64> = None;
    let mut post_tau: Vec<Option<(f64, f64)>> = vec![None; 3];
    let mut theta: Option<f64> = None;
    let mut checks = [0u64; 3];
    let mut cum = 0.0;
    let mut samples = Vec::with_capacity((steps / every + 1) as usize);
    let mut stream = model.stream(path);
    let mut inc = NoiseIncrement::zeros(model.modes(), dt);

    let take_sample = |u: &Phase,
                           up: &Phase,
                           v: &Phase,
                           gap: f64,
                           cum: f64,
                           active: bool,
                           snapper: &mut Snapshotter|
     -> Result<(CoupledSample, [Option<EnergySnapshot>; 3])> {
        let t = u.t();
        let w_sq = modal_distance_sq(u, v, &eig, alpha);
        let (prime_sq, prime_h_sq) = if cfg.track_prime {
            (
                modal_distance_sq(u, up, &eig, alpha),
                up.h_norm_sq(&eig, alpha),
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        let (psi_u1, psi_v1) = if cfg.weighted {
            let psi = snapper.weights().eval_psi(t)?;
            let pu = psi.hadamard(&Field::new(u.u().to_vec()));
            let pv = psi.hadamard(&Field::new(v.u().to_vec()));
            (h1_sq(&pu, &grid)?, h1_sq(&pv, &grid)?)
        } else {
            (f64::NAN, f64::NAN)
        };
        let mut snaps = [None, None, None];
        if truncating {
            snaps[0] = Some(snapper.full(dynamics, u)?);
            if cfg.track_prime {
                snaps[1] = Some(snapper.full(dynamics, up)?);
            }
            snaps[2] = Some(snapper.full(dynamics, v)?);
        }
        Ok((
            CoupledSample {
                t,
                w_sq,
                prime_sq,
                u_h_sq: u.h_norm_sq(&eig, alpha),
                prime_h_sq,
                u1: h1_modal(u, &eig),
                v1: h1_modal(v, &eig),
                psi_u1,
                psi_v1,
                drift_sq: gap,
                drift_cum: cum,
                active,
            },
            snaps,
        ))
    };

    let handle = |sample: CoupledSample,
                      snaps: [Option<EnergySnapshot>; 3],
                      detectors: &mut Vec<StopDetector>,
                      active: &mut bool,
                      tau: &mut Option<f64>,
                      post_tau: &mut Vec<Option<(f64, f64)>>,
                      theta: &mut Option<f64>,
                      samples: &mut Vec<CoupledSample>|
     -> Result<()> {
        if cfg.track_prime
            && theta.is_none()
            && sample.prime_sq.sqrt() >= cfg.sigma.c_sigma * (sample.t + 1.0).powf(-cfg.sigma.p_sigma)
        {
            *theta = Some(sample.t);
        }
        for (i, snap) in snaps.iter().enumerate() {
            let Some(snap) = snap else { continue };
            detectors[i].observe(snap, alpha)?;
            let f = detectors[i]
                .accumulators()
                .iter()
                .map(|a| a.f_psi_p)
                .fold(f64::NEG_INFINITY, f64::max);
            if let Some((f_tau, worst)) = post_tau[i].as_mut() {
                *worst = worst.max(f / *f_tau);
            }
        }
        if *active {
            let fired = detectors.iter().filter_map(|d| d.tau()).reduce(f64::min);
            if let Some(t_fire) = fired {
                *active = false;
                *tau = Some(t_fire);
                for (i, d) in detectors.iter().enumerate() {
                    if let Some(a) = d.accumulators().iter().map(|a| a.f_psi_p).reduce(f64::max) {
                        post_tau[i] = Some((a, 1.0));
                    }
                }
            }
        }
        samples.push(sample);
        Ok(())
    };

    let (s0, snaps0) = take_sample(&u, &up, &v, gap, cum, active, &mut snapper)?;
    handle(s0, snaps0, &mut detectors, &mut active, &mut tau, &mut post_tau, &mut theta, &mut samples)?;
    if !active {
        dynamics.decouple_auxiliary(&mut v);
        gap = 0.0;
    }

    for _ in 0..steps {
        let new_gap;
        if active {
            model.fill_increment(dt, &mut stream, &mut inc);
            let c = inc.checksum();
            dynamics.step_primal(&mut u, &inc)?;
            checks[0] = fold_checksum(checks[0], c);
            if cfg.track_prime {
                dynamics.step_primal(&mut up, &inc)?;
                checks[1] = fold_checksum(checks[1], c);
            }
            new_gap = dynamics.step_auxiliary(&mut v, &u, &inc, n_rank)?;
            checks[2] = fold_checksum(checks[2], c);
            cum += 0.5 * dt * (gap + new_gap);
        } else {
            dynamics.step_truncated(&mut u)?;
            if cfg.track_prime {
                dynamics.step_truncated(&mut up)?;
            }
            dynamics.step_truncated(&mut v)?;
            new_gap = 0.0;
        }
        gap = new_gap;
        if u.step() % every == 0 {
            let was_active = active;
            let (s, snaps) = take_sample(&u, &up, &v, gap, cum, active, &mut snapper)?;
            handle(s, snaps, &mut detectors, &mut active, &mut tau, &mut post_tau, &mut theta, &mut samples)?;
            if was_active && !active {
                dynamics.decouple_auxiliary(&mut v);
                gap = 0.0;
            }
        }
    }
    if !cfg.track_prime {
        checks[1] = checks[0];
    }
    let tau_by_system = [detectors[0].tau(), detectors[1].tau(), detectors[2].tau()];
    let post_tau_ratio = post_tau.iter().flatten().map(|p| p.1).reduce(f64::max);
    Ok(CoupledRun {
        rank: n_rank,
        path,
        dt,
        samples,
        tau,
        tau_by_system,
        theta,
        checksums: checks,
        post_tau_ratio,
        drift_total: cum,
    })
}

/// Which Foias-Prodi inequality to fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "part", rename_all = "snake_case")]
pub enum FpVariant {
    /// `|w(t)|^2 <= |w(s)|^2 exp(-a(t-s) + C int_s^t (||u||_1^2 + ||v||_1^2))`
    Part1,
    /// Same with `C_* eps int (||u||_1^2 + ||v||_1^2 + ||psi u||_1^2 + ||psi v||_1^2)`
    /// over `[s + T0, t + T0]`.
    Part2 { eps: f64, t0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpReport {
    pub variant: FpVariant,
    /// Smallest constant making the inequality hold at every sampled pair
    /// (`C` for part 1, `C_*` for part 2).
    pub constant: f64,
    pub pairs: usize,
    /// True when some pair needs an infinite constant.
    pub violation: bool,
}

/// Fits the Foias-Prodi constant on a recorded run. At most `max_points`
/// evenly spaced samples enter the pair search.
pub fn foias_prodi_check(run: &CoupledRun, variant: FpVariant, alpha: f64, max_points: usize) -> Result<FpReport> {
    if run.samples.len() < 2 {
        return Err(Error::IncompleteRecord("coupled run has fewer than two samples".into()));
    }
    let (start, eps, weighted) = match variant {
        FpVariant::Part1 => (0.0, 1.0, false),
        FpVariant::Part2 { eps, t0 } => {
            if !(eps > 0.0) {
                return Err(Error::Argument(format!("eps must be positive, got {eps}")));
            }
            (t0, eps, true)
        }
    };
    if weighted && run.samples.iter().any(|s| s.psi_u1.is_nan()) {
        return Err(Error::IncompleteRecord("weighted norms were not recorded".into()));
    }
    // cumulative integral of the exponent density by the trapezoid rule
    let density = |s: &CoupledSample| {
        if weighted {
            s.u1 + s.v1 + s.psi_u1 + s.psi_v1
        } else {
            s.u1 + s.v1
        }
    };
    let mut cum = vec![0.0; run.samples.len()];
    for i in 1..run.samples.len() {
        let (a, b) = (&run.samples[i - 1], &run.samples[i]);
        cum[i] = cum[i - 1] + 0.5 * (b.t - a.t) * (density(a) + density(b));
    }
    let idx: Vec<usize> = (0..run.samples.len())
        .filter(|&i| run.samples[i].t >= start - 1e-12)
        .collect();
    if idx.len() < 2 {
        return Err(Error::IncompleteRecord("no samples after T0".into()));
    }
    let stride = idx.len().div_ceil(max_points.max(2));
    let pts: Vec<usize> = idx.iter().copied().step_by(stride.max(1)).collect();
    let mut constant: f64 = 0.0;
    let mut violation = false;
    let mut pairs = 0;
    for (a, &i) in pts.iter().enumerate() {
        for &j in &pts[a + 1..] {
            let (s, t) = (&run.samples[i], &run.samples[j]);
            pairs += 1;
            if s.w_sq == 0.0 {
                if t.w_sq > 0.0 {
                    violation = true;
                }
                continue;
            }
            if t.w_sq == 0.0 {
                continue;
            }
            let need = (t.w_sq / s.w_sq).ln() + alpha * (t.t - s.t);
            if need <= 0.0 {
                continue;
            }
            let integral = eps * (cum[j] - cum[i]);
            if integral <= 0.0 {
                violation = true;
            } else {
                constant = constant.max(need / integral);
            }
        }
    }
    Ok(FpReport {
        variant,
        constant,
        pairs,
        violation,
    })
}

/// Girsanov drift `-P_N(f(u) - f(v))` while `active`, zero afterwards, with its squared norm.
pub fn girsanov_drift_step(
    u_hat: &[f64],
    v_hat: &[f64],
    model: &NoiseModel,
    m: f64,
    rank: usize,
    active: bool,
) -> Result<(Field, f64)> {
    let grid = *model.grid();
    crate::error::check_len(grid.n(), u_hat.len())?;
    crate::error::check_len(grid.n(), v_hat.len())?;
    if !active {
        return Ok((grid.zeros(), 0.0));
    }
    let fu = nonlinearity(u_hat, m);
    let fv = nonlinearity(v_hat, m);
    let diff: Vec<f64> = fv.iter().zip(fu.iter()).map(|(b, a)| b - a).collect();
    let drift = model.project_p(&diff, rank)?;
    let sq = crate::grid::norm_sq(&drift, &grid)?;
    Ok((drift, sq))
}

/// Pathwise total-variation surrogate `0.5 sqrt(exp(6 D / b_min^2) - 1)`, clamped to 1.
pub fn tv_surrogate(cumulative_drift: f64, b_min: f64) -> Result<f64> {
    if !(b_min > 0.0) {
        return Err(Error::Config(
            "b_min must be positive: every mode up to the projection rank must be forced".into(),
        ));
    }
    if !(cumulative_drift >= 0.0) {
        return Err(Error::Argument(format!(
            "cumulative drift must be nonnegative, got {cumulative_drift}"
        )));
    }
    let x = 6.0 * cumulative_drift / (b_min * b_min);
    Ok((0.5 * x.exp_m1().sqrt()).min(1.0))
}

/// Steps `u`, `v` and, independently, `w` by the difference equation
/// `w'' + A w + gamma w' + Q_N(f(u) - f(v)) = 0` with the nonlinear term taken
/// from the coupled pair. Returns the largest modal deviation between `w` and
/// `u - v` over the run.
pub fn w_equation_gap(
    y0: &State,
    y0_prime: &State,
    dynamics: &Dynamics,
    model: &NoiseModel,
    rank: usize,
    steps: u64,
) -> Result<f64> {
    let mut u = dynamics.phase(y0)?;
    let mut v = dynamics.phase(y0_prime)?;
    dynamics.couple_auxiliary(&mut v, &u, rank)?;
    let mut wp: Vec<f64> = u.pos_modes().iter().zip(v.pos_modes()).map(|(a, b)| a - b).collect();
    let mut wv: Vec<f64> = u.vel_modes().iter().zip(v.vel_modes()).map(|(a, b)| a - b).collect();
    let forcing = |u: &Phase, v: &Phase| -> Vec<f64> {
        u.nonlinear_modes()
            .iter()
            .zip(v.nonlinear_modes())
            .map(|(a, b)| a - b)
            .collect()
    };
    let mut g0 = forcing(&u, &v);
    let mut stream = model.stream(0);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let inc = model.sample_increment(dynamics.dt(), &mut stream)?;
        dynamics.step_primal(&mut u, &inc)?;
        dynamics.step_auxiliary(&mut v, &u, &inc, rank)?;
        let g1 = forcing(&u, &v);
        dynamics.step_linear_forced(&mut wp, &mut wv, &g0, &g1);
        g0 = g1;
        for k in 0..wp.len() {
            let dp = (u.pos_modes()[k] - v.pos_modes()[k] - wp[k]).abs();
            let dv = (u.vel_modes()[k] - v.vel_modes()[k] - wv[k]).abs();
            worst = worst.max(dp).max(dv);
        }
    }
    Ok(worst)
}

/// Per-path critical slope `sup_{t>0} (F(t) - m_c E(0)^p - rho) / t`: the path's
/// stopping time is finite on the sampled horizon exactly when `K + L` lies below it.
pub fn critical_slope(series: &[(f64, f64)], e0: f64, m_c: f64, p: f64, rho: f64) -> f64 {
    series
        .iter()
        .filter(|s| s.0 > 0.0)
        .map(|&(t, f)| (f - m_c * e0.powf(p) - rho) / t)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Calibrates `K` so that a fraction `fire_fraction` of pilot paths stops at `rho`.
/// Each pilot entry is a `(t, F^{psi,p})` series with its `E(0)`.
pub fn calibrate_stopping(
    pilot: &[(Vec<(f64, f64)>, f64)],
    p: f64,
    rho: f64,
    fire_fraction: f64,
    l_c: f64,
) -> Result<StoppingConfig> {
    if pilot.is_empty() {
        return Err(Error::Argument("calibration needs at least one pilot path".into()));
    }
    let mut slopes: Vec<f64> = pilot
        .iter()
        .map(|(s, e0)| critical_slope(s, *e0, 1.0, p, rho))
        .collect();
    slopes.sort_by(f64::total_cmp);
    let q = crate::mixing::quantile_sorted(&slopes, 1.0 - fire_fraction);
    let cfg = StoppingConfig {
        m_c: 1.0,
        k_c: (q - l_c).max(0.0),
        l_c,
        rho,
        p,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Empirical `P(tau < horizon)` for one rule at one threshold offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRow {
    pub rho: f64,
    pub fired: usize,
    pub paths: usize,
    pub freq: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// Stopping frequencies over a set of offsets `rho`, with the least-squares
/// fit of `ln P` against `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingTail {
    pub rule: StoppingConfig,
    pub rows: Vec<StoppingRow>,
    /// Slope and `R^2` of `ln freq` vs `rho` (absent when some frequency is 0).
    pub log_slope: Option<f64>,
    pub log_r_squared: Option<f64>,
}

impl StoppingTail {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].freq < w[0].freq)
    }

    pub fn nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].freq <= w[0].freq)
    }
}

/// Applies `rule` with each `rho` to `(t, F^{psi,p})` series paired with their `E(0)`.
pub fn stopping_tail(series: &[(Vec<(f64, f64)>, f64)], rule: &StoppingConfig, rhos: &[f64]) -> Result<StoppingTail> {
    rule.validate()?;
    if series.is_empty() {
        return Err(Error::Argument("no stopping series".into()));
    }
    let n = series.len();
    let rows: Vec<StoppingRow> = rhos
        .iter()
        .map(|&rho| {
            let r = rule.with_rho(rho);
            let fired = series.iter().filter(|(s, e0)| detect_stopping(s, *e0, &r).is_some()).count();
            let (lo, hi) = crate::mixing::wilson_interval(fired, n);
            StoppingRow {
                rho,
                fired,
                paths: n,
                freq: fired as f64 / n as f64,
                wilson_lo: lo,
                wilson_hi: hi,
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.fired > 0).map(|r| (r.rho, r.freq.ln())).collect();
    let (log_slope, log_r_squared) = if pts.len() == rows.len() && pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
        let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
        (Some(sxy / sxx), Some(r2))
    } else {
        (None, None)
    };
    Ok(StoppingTail {
        rule: *rule,
        rows,
        log_slope,
        log_r_squared,
    })
}
