//! Ensemble statistics: mean-energy bounds, supermartingale tails, an empirical
//! dual-Lipschitz distance between laws, rate fits, recurrence times and the
//! irreducibility probe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{run_trajectory, steps_for, Dynamics, Observer, Phase, System};
use crate::error::{Error, Result};
use crate::functionals::{accumulate, Accumulators, EnergySnapshot, Snapshotter};
use crate::grid::{Field, State};
use crate::noise::{NoiseIncrement, NoiseModel};
use crate::rng::SimRng;

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Wilson score interval at 95% for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// The recurrence weight `g(r) = 1 + r^2`.
pub fn recurrence_weight(r: f64) -> f64 {
    1.0 + r * r
}

/// `|y|_H` of a physical state.
pub fn h_norm(state: &State, dynamics: &Dynamics) -> Result<f64> {
    let p = dynamics.phase(state)?;
    Ok(p.h_norm_sq(dynamics.basis().eigenvalues(), dynamics.params().alpha).sqrt())
}

/// Rescales `state` so that `|state|_H = radius`.
pub fn scale_to_h_norm(state: &State, dynamics: &Dynamics, radius: f64) -> Result<State> {
    let n = h_norm(state, dynamics)?;
    if n == 0.0 {
        if radius == 0.0 {
            return Ok(state.clone());
        }
        return Err(Error::Argument("cannot rescale the zero state".into()));
    }
    Ok(state.scaled(radius / n))
}

/// Gaussian bump `u = exp(-x^2/2)`, `u_t = 0`, scaled to `|y|_H = radius`.
pub fn gaussian_bump(dynamics: &Dynamics, radius: f64) -> Result<State> {
    let g = dynamics.grid();
    if radius == 0.0 {
        return Ok(State::zeros(g));
    }
    let s = State {
        pos: g.sample(|x| (-0.5 * x * x).exp()),
        vel: g.zeros(),
    };
    scale_to_h_norm(&s, dynamics, radius)
}

/// Random state with Gaussian modal weights on the first `modes` sine modes,
/// pointing in a random direction with `|y|_H = radius`.
pub fn random_state(dynamics: &Dynamics, modes: usize, radius: f64, rng: &mut SimRng) -> Result<State> {
    let n = dynamics.grid().n();
    let modes = modes.clamp(1, n);
    let mut pos = vec![0.0; n];
    let mut vel = vec![0.0; n];
    for k in 0..modes {
        let w = 1.0 / (1.0 + k as f64);
        pos[k] = w * rng.normal();
        vel[k] = w * rng.normal();
    }
    let phase = dynamics.phase_from_modes(pos, vel)?;
    let state = dynamics.state(&phase);
    scale_to_h_norm(&state, dynamics, radius)
}

/// How each path of an ensemble starts.
#[derive(Debug, Clone)]
pub enum InitialData {
    Fixed(State),
    /// Independent random states with `|y|_H` uniform in `[0, radius]`.
    RandomBall { radius: f64, modes: usize, seed: u64 },
}

impl InitialData {
    pub fn state_for(&self, path: u64, dynamics: &Dynamics) -> Result<State> {
        match self {
            InitialData::Fixed(s) => Ok(s.clone()),
            InitialData::RandomBall { radius, modes, seed } => {
                let mut rng = SimRng::new(*seed, path.wrapping_add(1) << 1);
                let r = radius * rng.uniform();
                random_state(dynamics, *modes, r, &mut rng)
            }
        }
    }
}

/// Ensemble settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub paths: usize,
    /// Noise path index of the first member; members use consecutive indices.
    pub path_offset: u64,
    pub t_end: f64,
    /// Sampling interval in steps.
    pub every: u64,
    pub weighted: bool,
    pub system: System,
    pub keep_terminal: bool,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            paths: 200,
            path_offset: 0,
            t_end: 50.0,
            every: 250,
            weighted: false,
            system: System::Primal,
            keep_terminal: false,
        }
    }
}

/// Sampled record of one member.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub path: u64,
    pub snapshots: Vec<EnergySnapshot>,
    /// Dictionary features `(y(t), g_k)_H` per sample.
    pub features: Vec<Vec<f64>>,
    pub terminal: Option<State>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub path: u64,
    pub message: String,
}

/// Empirical stand-in for the law of the solution at the sampled times.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    pub times: Vec<f64>,
    /// Successful members in path order.
    pub records: Vec<PathRecord>,
    pub failures: Vec<PathFailure>,
    /// Fingerprint of the dictionary the features were computed with.
    pub dictionary_id: Option<u64>,
}

impl Ensemble {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Sample index of time `t` (nearest).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
    }

    /// Mean of `E` over the members at each sample.
    pub fn mean_energy(&self) -> Vec<f64> {
        let n = self.records.len() as f64;
        (0..self.times.len())
            .map(|i| self.records.iter().map(|r| r.snapshots[i].e).sum::<f64>() / n)
            .collect()
    }

    /// Running accumulators of one member for exponent `p`.
    pub fn accumulators(&self, member: usize, alpha: f64, p: f64) -> Result<Vec<Accumulators>> {
        let snaps = &self.records[member].snapshots;
        let mut out = Vec::with_capacity(snaps.len());
        let mut acc = Accumulators::start(&snaps[0], alpha, p)?;
        out.push(acc);
        for w in snaps.windows(2) {
            acc = accumulate(&acc, &w[0], &w[1]);
            out.push(acc);
        }
        Ok(out)
    }
}

struct MemberObserver<'a> {
    every: u64,
    weighted: bool,
    snapper: Snapshotter,
    dict: Option<&'a DualLipschitzDictionary>,
    snapshots: Vec<EnergySnapshot>,
    features: Vec<Vec<f64>>,
}

impl Observer for MemberObserver<'_> {
    fn observe(&mut self, dynamics: &Dynamics, phase: &Phase) -> Result<()> {
        if !phase.step().is_multiple_of(self.every) {
            return Ok(());
        }
        let mut snap = if self.weighted {
            self.snapper.full(dynamics, phase)?
        } else {
            self.snapper.unweighted(dynamics, phase)
        };
        if !self.weighted {
            snap.e_psi = snap.e;
            snap.xi_psi_sq = 0.0;
        }
        self.snapshots.push(snap);
        if let Some(d) = self.dict {
            self.features.push(d.features(phase));
        }
        Ok(())
    }
}

/// Runs the members in parallel on the current rayon pool. Results are
/// collected in path order, so every statistic is independent of scheduling.
pub fn run_ensemble(
    initial: &InitialData,
    dynamics: &Dynamics,
    model: &NoiseModel,
    spec: &EnsembleSpec,
    dict: Option<&DualLipschitzDictionary>,
) -> Result<Ensemble> {
    if spec.paths < 2 {
        return Err(Error::Argument(format!("an ensemble needs at least 2 paths, got {}", spec.paths)));
    }
    steps_for(spec.t_end, dynamics.dt())?;
    let every = spec.every.max(1);
    let outcomes: Vec<(u64, Result<PathRecord>)> = (0..spec.paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = spec.path_offset + i;
            let run = || -> Result<PathRecord> {
                let y0 = initial.state_for(path, dynamics)?;
                let mut obs = MemberObserver {
                    every,
                    weighted: spec.weighted,
                    snapper: Snapshotter::new(dynamics),
                    dict,
                    snapshots: Vec::new(),
                    features: Vec::new(),
                };
                let traj = run_trajectory(&y0, dynamics, spec.system, model, path, spec.t_end, &mut [&mut obs])?;
                Ok(PathRecord {
                    path,
                    snapshots: obs.snapshots,
                    features: obs.features,
                    terminal: spec.keep_terminal.then(|| dynamics.state(&traj.final_phase)),
                })
            };
            (path, run())
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (path, r) in outcomes {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(PathFailure {
                path,
                message: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::Argument(format!(
            "every path of the ensemble failed; first failure: {}",
            failures[0].message
        )));
    }
    let times = records[0].snapshots.iter().map(|s| s.t).collect();
    Ok(Ensemble {
        spec: spec.clone(),
        times,
        records,
        failures,
        dictionary_id: dict.map(|d| d.id()),
    })
}

/// Outcome of [`mean_energy_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEnergyReport {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub plateau_early: f64,
    pub plateau_late: f64,
    /// `1.5 x plateau_late`
    pub c_hat: f64,
    /// `min_t (mean(0) e^{-a t} + c_hat - mean(t))`
    pub margin: f64,
    pub holds: bool,
    /// Relative change of the plateau between the two windows.
    pub plateau_drift: f64,
    pub plateau_stable: bool,
    /// Fewer than 50 paths.
    pub low_power: bool,
}

/// Averaging windows for the plateau estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauWindows {
    pub early: (f64, f64),
    pub late: (f64, f64),
}

impl Default for PlateauWindows {
    fn default() -> Self {
        Self {
            early: (12.5, 17.5),
            late: (37.5, 42.5),
        }
    }
}

fn window_mean(times: &[f64], values: &[f64], w: (f64, f64)) -> Result<f64> {
    let sel: Vec<f64> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= w.0 - 1e-9 && **t <= w.1 + 1e-9)
        .map(|(_, v)| *v)
        .collect();
    if sel.is_empty() {
        return Err(Error::IncompleteRecord(format!(
            "no samples in the window [{}, {}]",
            w.0, w.1
        )));
    }
    Ok(sel.iter().sum::<f64>() / sel.len() as f64)
}

/// Checks `mean E(t) <= mean E(0) e^{-a t} + C` with `C = 1.5 x` the late plateau.
pub fn mean_energy_check(ens: &Ensemble, alpha: f64, windows: PlateauWindows) -> Result<MeanEnergyReport> {
    let mean = ens.mean_energy();
    let plateau_early = window_mean(&ens.times, &mean, windows.early)?;
    let plateau_late = window_mean(&ens.times, &mean, windows.late)?;
    let c_hat = 1.5 * plateau_late;
    let margin = ens
        .times
        .iter()
        .zip(&mean)
        .map(|(t, m)| mean[0] * (-alpha * t).exp() + c_hat - m)
        .fold(f64::INFINITY, f64::min);
    let plateau_drift = if plateau_late == 0.0 {
        0.0
    } else {
        (plateau_early - plateau_late).abs() / plateau_late
    };
    Ok(MeanEnergyReport {
        times: ens.times.clone(),
        mean,
        plateau_early,
        plateau_late,
        c_hat,
        margin,
        holds: margin >= 0.0,
        plateau_drift,
        plateau_stable: plateau_drift <= 0.1,
        low_power: ens.records.len() < 50,
    })
}

/// Functionals of the supermartingale tail estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailFunctional {
    /// `sup (E(t) + a int E - (||h||^2 + B1) t) - E(0)`
    Energy,
    /// `sup (F(t) - (||h||^2 + B1) t) - F(0)`
    EnergyComposite,
    /// `sup (E^psi(t) + a int E^psi - K t) - E^psi(0) - M E(0)`
    Weighted,
    /// `sup (F^psi(t) - K t) - F^psi(0) - M E(0)`
    WeightedComposite,
}

impl TailFunctional {
    pub const ALL: [TailFunctional; 4] = [
        TailFunctional::Energy,
        TailFunctional::EnergyComposite,
        TailFunctional::Weighted,
        TailFunctional::WeightedComposite,
    ];

    pub fn is_weighted(self) -> bool {
        matches!(self, TailFunctional::Weighted | TailFunctional::WeightedComposite)
    }

    pub fn name(self) -> &'static str {
        match self {
            TailFunctional::Energy => "energy",
            TailFunctional::EnergyComposite => "energy_composite",
            TailFunctional::Weighted => "weighted",
            TailFunctional::WeightedComposite => "weighted_composite",
        }
    }
}

/// Constants entering the tail bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailConstants {
    pub alpha: f64,
    pub b1: f64,
    pub b2: f64,
    pub h_norm_sq: f64,
    pub phi_h_norm_sq: f64,
    /// Multiplier of `E(0)` in the weighted events.
    pub m_weight: f64,
}

impl TailConstants {
    pub fn from_model(dynamics: &Dynamics, model: &NoiseModel) -> Result<Self> {
        let grid = dynamics.grid();
        let h = &dynamics.params().h;
        let weights = crate::grid::WeightTables::new(grid);
        let phi_h = weights.phi().hadamard(h);
        Ok(Self {
            alpha: dynamics.params().alpha,
            b1: model.b1(),
            b2: model.b2(),
            h_norm_sq: crate::grid::norm_sq(h, grid)?,
            phi_h_norm_sq: crate::grid::norm_sq(&phi_h, grid)?,
            m_weight: 1.0,
        })
    }

    /// `a / (8 B1)`
    pub fn beta(&self) -> f64 {
        self.alpha / (8.0 * self.b1)
    }

    /// `a / (8 B1) ^ a / (8 B2)`
    pub fn beta0(&self) -> f64 {
        (self.alpha / (8.0 * self.b1)).min(self.alpha / (8.0 * self.b2))
    }

    /// Drift slope `K = B1 + ||h||^2 + B2 + ||phi h||^2` of the weighted events.
    pub fn k_weight(&self) -> f64 {
        self.b1 + self.h_norm_sq + self.b2 + self.phi_h_norm_sq
    }

    pub fn bound(&self, f: TailFunctional, rho: f64) -> f64 {
        if f.is_weighted() {
            (2.0 * (-self.beta0() * rho).exp()).min(1.0)
        } else {
            (-self.beta() * rho).exp()
        }
    }
}

/// Per-member excess statistic whose exceedance of `rho` defines the tail event.
pub fn tail_statistic(ens: &Ensemble, member: usize, f: TailFunctional, c: &TailConstants) -> Result<f64> {
    if f.is_weighted() && !ens.spec.weighted {
        return Err(Error::IncompleteRecord("weighted tails need a weighted ensemble".into()));
    }
    let accs = ens.accumulators(member, c.alpha, 1.0)?;
    let snaps = &ens.records[member].snapshots;
    let e0 = snaps[0].e;
    let slope = if f.is_weighted() { c.k_weight() } else { c.b1 + c.h_norm_sq };
    let mut sup = f64::NEG_INFINITY;
    for (s, a) in snaps.iter().zip(&accs) {
        let value = match f {
            TailFunctional::Energy => s.e + c.alpha * a.int_e,
            TailFunctional::EnergyComposite => a.f,
            TailFunctional::Weighted => s.e_psi + c.alpha * a.int_e_psi,
            TailFunctional::WeightedComposite => a.f_psi,
        };
        sup = sup.max(value - slope * s.t);
    }
    let base = match f {
        TailFunctional::Energy | TailFunctional::EnergyComposite => e0,
        TailFunctional::Weighted | TailFunctional::WeightedComposite => snaps[0].e_psi + c.m_weight * e0,
    };
    Ok(sup - base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub rho: f64,
    pub exceed: usize,
    pub paths: usize,
    pub freq: f64,
    pub wilson_hi: f64,
    pub bound: f64,
    /// `wilson_hi <= 2 x bound`
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub functional: TailFunctional,
    pub beta: f64,
    pub rows: Vec<TailRow>,
}

impl TailReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

/// Empirical exceedance frequencies against the exponential tail bound.
pub fn supermartingale_tail(
    ens: &Ensemble,
    f: TailFunctional,
    rhos: &[f64],
    c: &TailConstants,
) -> Result<TailReport> {
    let stats: Vec<f64> = (0..ens.records.len())
        .map(|i| tail_statistic(ens, i, f, c))
        .collect::<Result<_>>()?;
    let n = stats.len();
    let rows = rhos
        .iter()
        .map(|&rho| {
            let exceed = stats.iter().filter(|&&x| x >= rho).count();
            let (_, hi) = wilson_interval(exceed, n);
            let bound = c.bound(f, rho);
            TailRow {
                rho,
                exceed,
                paths: n,
                freq: exceed as f64 / n as f64,
                wilson_hi: hi,
                bound,
                holds: hi <= 2.0 * bound,
            }
        })
        .collect();
    Ok(TailReport {
        functional: f,
        beta: if f.is_weighted() { c.beta0() } else { c.beta() },
        rows,
    })
}

/// Test functionals `F_k(y) = tanh((y, g_k)_H + theta_k) / 2` with `|g_k|_H = 1`.
///
/// Directions live on the first `modes` sine modes. They are generated
/// sequentially, so a dictionary of size `D` is a prefix of any larger one
/// built from the same seed.
#[derive(Debug, Clone)]
pub struct DualLipschitzDictionary {
    /// Modal coefficients of `g_k`'s position and of `g_k`'s `z = v + a u` component.
    pos: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    eig: Vec<f64>,
    alpha: f64,
    seed: u64,
}

impl DualLipschitzDictionary {
    pub fn new(dynamics: &Dynamics, modes: usize, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Argument("dictionary size must be positive".into()));
        }
        let modes = modes.clamp(1, dynamics.grid().n());
        let eig = dynamics.basis().eigenvalues()[..modes].to_vec();
        let mut rng = SimRng::new(seed, 0);
        let mut pos = Vec::with_capacity(size);
        let mut z = Vec::with_capacity(size);
        let mut offsets = Vec::with_capacity(size);
        for _ in 0..size {
            let mut a: Vec<f64> = (0..modes).map(|_| rng.normal()).collect();
            let mut b: Vec<f64> = (0..modes).map(|_| rng.normal()).collect();
            let norm = (a.iter().zip(&eig).map(|(x, l)| l * x * x).sum::<f64>()
                + b.iter().map(|x| x * x).sum::<f64>())
            .sqrt();
            a.iter_mut().for_each(|x| *x /= norm);
            b.iter_mut().for_each(|x| *x /= norm);
            pos.push(a);
            z.push(b);
            offsets.push(rng.uniform_in(-1.0, 1.0));
        }
        Ok(Self {
            pos,
            z,
            offsets,
            eig,
            alpha: dynamics.params().alpha,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn modes(&self) -> usize {
        self.eig.len()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Fingerprint shared by dictionaries with the same seed and modes.
    pub fn id(&self) -> u64 {
        self.seed.rotate_left(17) ^ (self.eig.len() as u64)
    }

    /// `|g_k|_H^2`
    pub fn direction_norm_sq(&self, k: usize) -> f64 {
        self.pos[k].iter().zip(&self.eig).map(|(x, l)| l * x * x).sum::<f64>()
            + self.z[k].iter().map(|x| x * x).sum::<f64>()
    }

    /// `(y, g_k)_H` for every `k`.
    pub fn features(&self, phase: &Phase) -> Vec<f64> {
        let m = self.modes();
        let a = &phase.pos_modes()[..m];
        let zeta: Vec<f64> = phase.vel_modes()[..m]
            .iter()
            .zip(a)
            .map(|(v, u)| v + self.alpha * u)
            .collect();
        let la: Vec<f64> = a.iter().zip(&self.eig).map(|(x, l)| l * x).collect();
        (0..self.len())
            .map(|k| {
                la.iter().zip(&self.pos[k]).map(|(x, g)| x * g).sum::<f64>()
                    + zeta.iter().zip(&self.z[k]).map(|(x, g)| x * g).sum::<f64>()
            })
            .collect()
    }

    pub fn features_of_state(&self, state: &State, dynamics: &Dynamics) -> Result<Vec<f64>> {
        Ok(self.features(&dynamics.phase(state)?))
    }

    /// `F_k` evaluated from a feature value.
    pub fn test_value(&self, k: usize, feature: f64) -> f64 {
        0.5 * (feature + self.offsets[k]).tanh()
    }
}

/// `max_k |mean_a F_k - mean_b F_k|` over the first `size` dictionary entries.
pub fn dual_lipschitz_from_features(
    a: &[&[f64]],
    b: &[&[f64]],
    dict: &DualLipschitzDictionary,
    size: usize,
) -> Result<f64> {
    if size == 0 || dict.is_empty() {
        return Err(Error::Argument("dictionary is empty".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("empirical measures must be nonempty".into()));
    }
    let size = size.min(dict.len());
    let mut best: f64 = 0.0;
    for k in 0..size {
        let ma = a.iter().map(|f| dict.test_value(k, f[k])).sum::<f64>() / a.len() as f64;
        let mb = b.iter().map(|f| dict.test_value(k, f[k])).sum::<f64>() / b.len() as f64;
        best = best.max((ma - mb).abs());
    }
    Ok(best)
}

/// Dictionary estimate of the dual-Lipschitz distance between two ensembles at
/// sample `index`, using the first `size` test functionals. It is a lower bound
/// of the distance over all test functions with Lipschitz norm at most 1.
pub fn dual_lipschitz_distance(
    a: &Ensemble,
    b: &Ensemble,
    dict: &DualLipschitzDictionary,
    index: usize,
    size: usize,
) -> Result<f64> {
    for e in [a, b] {
        if e.dictionary_id != Some(dict.id()) {
            return Err(Error::Argument("ensemble features were computed with another dictionary".into()));
        }
        if index >= e.times.len() {
            return Err(Error::Argument(format!("sample index {index} out of range")));
        }
    }
    let fa: Vec<&[f64]> = a.records.iter().map(|r| r.features[index].as_slice()).collect();
    let fb: Vec<&[f64]> = b.records.iter().map(|r| r.features[index].as_slice()).collect();
    dual_lipschitz_from_features(&fa, &fb, dict, size)
}

/// Distance series `(t, d(t))` over all common samples.
pub fn distance_series(a: &Ensemble, b: &Ensemble, dict: &DualLipschitzDictionary) -> Result<Vec<(f64, f64)>> {
    let n = a.times.len().min(b.times.len());
    (0..n)
        .map(|i| Ok((a.times[i], dual_lipschitz_distance(a, b, dict, i, dict.len())?)))
        .collect()
}

/// Sampling-noise level of the estimator at sample `index`: the distance
/// between the even- and odd-indexed halves of one ensemble.
pub fn split_half_floor(ens: &Ensemble, dict: &DualLipschitzDictionary, index: usize) -> Result<f64> {
    let even: Vec<&[f64]> = ens.records.iter().step_by(2).map(|r| r.features[index].as_slice()).collect();
    let odd: Vec<&[f64]> = ens.records.iter().skip(1).step_by(2).map(|r| r.features[index].as_slice()).collect();
    dual_lipschitz_from_features(&even, &odd, dict, dict.len())
}

/// Sampling-noise level of the estimator at sample `index` for ensembles driven
/// by common random numbers: `1.96` standard errors of the paired differences
/// `F_k(a_i) - F_k(b_i)`, maximised over the dictionary. Members are paired by
/// path index; unpaired members are ignored.
pub fn paired_floor(a: &Ensemble, b: &Ensemble, dict: &DualLipschitzDictionary, index: usize) -> Result<f64> {
    let pairs: Vec<(&[f64], &[f64])> = a
        .records
        .iter()
        .filter_map(|ra| {
            let rb = b.records.iter().find(|rb| rb.path == ra.path)?;
            Some((ra.features.get(index)?.as_slice(), rb.features.get(index)?.as_slice()))
        })
        .collect();
    if pairs.len() < 2 {
        return Err(Error::Argument("paired floor needs at least two common paths".into()));
    }
    let n = pairs.len() as f64;
    let mut worst: f64 = 0.0;
    for k in 0..dict.len() {
        let diffs: Vec<f64> = pairs
            .iter()
            .map(|(fa, fb)| dict.test_value(k, fa[k]) - dict.test_value(k, fb[k]))
            .collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        worst = worst.max((var / n).sqrt());
    }
    Ok(1.96 * worst)
}

/// Least-squares fit of `ln d = ln C + slope ln(t + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub burn_in: f64,
    pub floor: f64,
    /// Samples dropped for lying at or below the floor.
    pub excluded: usize,
}

impl RateFit {
    pub fn constant(&self) -> f64 {
        self.intercept.exp()
    }

    pub fn predict(&self, t: f64) -> f64 {
        (self.intercept + self.slope * (t + 1.0).ln()).exp()
    }
}

/// Fits a polynomial rate to samples with `t >= burn_in` and `d > floor`.
pub fn fit_polynomial_rate(series: &[(f64, f64)], burn_in: f64, floor: f64) -> Result<RateFit> {
    let past: Vec<(f64, f64)> = series.iter().copied().filter(|s| s.0 >= burn_in).collect();
    let kept: Vec<(f64, f64)> = past.iter().copied().filter(|s| s.1 > floor).collect();
    if kept.len() < 5 {
        return Err(Error::IncompleteRecord(format!(
            "rate fit needs at least 5 samples above the floor after burn-in, got {}",
            kept.len()
        )));
    }
    let pts: Vec<(f64, f64)> = kept.iter().map(|&(t, d)| ((t + 1.0).ln(), d.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::IncompleteRecord("rate fit needs distinct times".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        times: kept.iter().map(|p| p.0).collect(),
        distances: kept.iter().map(|p| p.1).collect(),
        slope,
        intercept,
        r_squared,
        burn_in,
        floor,
        excluded: past.len() - kept.len(),
    })
}

/// Empirical recurrence-time distribution with censoring at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceReport {
    pub radius: f64,
    pub horizon: f64,
    pub paths: usize,
    pub censored: usize,
    /// `(T, P(tau_B <= T), Wilson lower, Wilson upper)`
    pub hitting: Vec<(f64, f64, f64, f64)>,
    /// `(p, E[min(tau_B, horizon)^p])` from the empirical survival function.
    pub moments: Vec<(f64, f64)>,
    /// Mean of `G = g(|y|_H) + g(|y'|_H)` over the initial pairs, with `g(r) = 1 + r^2`.
    pub mean_g: f64,
}

/// Summarizes first entry times (`None` when censored at `horizon`).
pub fn recurrence_stats(
    entries: &[Option<f64>],
    initial_norms: &[(f64, f64)],
    radius: f64,
    horizon: f64,
    checkpoints: &[f64],
    powers: &[f64],
) -> Result<RecurrenceReport> {
    if entries.is_empty() {
        return Err(Error::Argument("no recurrence samples".into()));
    }
    let n = entries.len();
    let censored = entries.iter().filter(|e| e.is_none()).count();
    let hitting = checkpoints
        .iter()
        .map(|&t| {
            let k = entries.iter().filter(|e| matches!(e, Some(x) if *x <= t)).count();
            let (lo, hi) = wilson_interval(k, n);
            (t, k as f64 / n as f64, lo, hi)
        })
        .collect();
    let moments = powers
        .iter()
        .map(|&p| {
            let m = entries.iter().map(|e| e.unwrap_or(horizon).min(horizon).powf(p)).sum::<f64>() / n as f64;
            (p, m)
        })
        .collect();
    let mean_g = if initial_norms.is_empty() {
        f64::NAN
    } else {
        initial_norms
            .iter()
            .map(|&(a, b)| recurrence_weight(a) + recurrence_weight(b))
            .sum::<f64>()
            / initial_norms.len() as f64
    };
    Ok(RecurrenceReport {
        radius,
        horizon,
        paths: n,
        censored,
        hitting,
        moments,
        mean_g,
    })
}

/// First sampled time at which both `u` and `u'`, driven by the same noise,
/// lie in `B_H(0, radius)`.
pub fn first_joint_entry(
    y0: &State,
    y0_prime: &State,
    dynamics: &Dynamics,
    model: &NoiseModel,
    path: u64,
    radius: f64,
    horizon: f64,
    every: u64,
) -> Result<Option<f64>> {
    let eig = dynamics.basis().eigenvalues();
    let alpha = dynamics.params().alpha;
    let r2 = radius * radius;
    let mut u = dynamics.phase(y0)?;
    let mut up = dynamics.phase(y0_prime)?;
    up.set_label("u'");
    let inside = |p: &Phase| p.h_norm_sq(eig, alpha) <= r2;
    if inside(&u) && inside(&up) {
        return Ok(Some(0.0));
    }
    let steps = steps_for(horizon, dynamics.dt())?;
    let every = every.max(1);
    let mut stream = model.stream(path);
    let mut inc = NoiseIncrement::zeros(model.modes(), dynamics.dt());
    for _ in 0..steps {
        model.fill_increment(dynamics.dt(), &mut stream, &mut inc);
        dynamics.step_primal(&mut u, &inc)?;
        dynamics.step_primal(&mut up, &inc)?;
        if u.step() % every == 0 && inside(&u) && inside(&up) {
            return Ok(Some(u.t()));
        }
    }
    Ok(None)
}

/// Settings of [`irreducibility_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub candidates: usize,
    pub paths: usize,
    pub t_max: f64,
    /// Granularity of the landing-time search.
    pub t_step: f64,
    pub seed: u64,
    pub path_offset: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            candidates: 16,
            paths: 200,
            t_max: 200.0,
            t_step: 1.0,
            seed: 0,
            path_offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrreducibilityReport {
    pub radius: f64,
    pub d: f64,
    pub t_found: f64,
    /// Largest noise-free `|y^e(T)|_H` over the candidates.
    pub worst_landing: f64,
    pub hits: usize,
    pub paths: usize,
    pub p0_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

impl IrreducibilityReport {
    pub fn positive(&self) -> bool {
        self.wilson_lo > 0.0
    }
}

/// Finds `T` such that the input-free flow from every sampled `|y_0|_H <= R`
/// lands in `B_H(0, d/2)`, then estimates `P(|y(T)|_H < d)` under the full
/// dynamics from the worst candidate.
pub fn irreducibility_probe(
    radius: f64,
    d: f64,
    dynamics: &Dynamics,
    model: &NoiseModel,
    opts: &ProbeOptions,
) -> Result<IrreducibilityReport> {
    if !(d > 0.0 && radius >= 0.0) {
        return Err(Error::Argument(format!("need R >= 0 and d > 0, got R = {radius}, d = {d}")));
    }
    let eig = dynamics.basis().eigenvalues();
    let alpha = dynamics.params().alpha;
    let norm = |p: &Phase| p.h_norm_sq(eig, alpha).sqrt();
    let mut rng = SimRng::new(opts.seed, 1);
    let mut candidates = vec![gaussian_bump(dynamics, radius)?];
    for _ in 1..opts.candidates.max(1) {
        candidates.push(random_state(dynamics, 32, radius, &mut rng)?);
    }
    let step_block = steps_for(opts.t_step, dynamics.dt())?.max(1);
    let max_blocks = (opts.t_max / opts.t_step).floor() as u64;
    let mut phases: Vec<Phase> = candidates.iter().map(|s| dynamics.phase(s)).collect::<Result<_>>()?;
    let mut block = 0u64;
    let landing = loop {
        let (worst_idx, worst) = phases
            .iter()
            .map(norm)
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, 0.0));
        if worst < 0.5 * d {
            break Some((block as f64 * opts.t_step, worst, worst_idx));
        }
        if block >= max_blocks {
            break None;
        }
        for p in phases.iter_mut() {
            for _ in 0..step_block {
                dynamics.step_truncated(p)?;
            }
        }
        block += 1;
    };
    let Some((t_found, worst_landing, worst_idx)) = landing else {
        return Err(Error::Argument(format!(
            "input-free flow did not enter B(0, {}) by T = {}; dissipation is too weak for these parameters",
            0.5 * d,
            opts.t_max
        )));
    };
    let y0 = &candidates[worst_idx];
    let d2 = d * d;
    let hits: Vec<bool> = (0..opts.paths as u64)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let traj = run_trajectory(y0, dynamics, System::Primal, model, opts.path_offset + i, t_found, &mut [])?;
            Ok(traj.final_phase.h_norm_sq(eig, alpha) < d2)
        })
        .collect::<Result<_>>()?;
    let k = hits.iter().filter(|h| **h).count();
    let (lo, hi) = wilson_interval(k, opts.paths);
    Ok(IrreducibilityReport {
        radius,
        d,
        t_found,
        worst_landing,
        hits: k,
        paths: opts.paths,
        p0_hat: if opts.paths == 0 { f64::NAN } else { k as f64 / opts.paths as f64 },
        wilson_lo: lo,
        wilson_hi: hi,
    })
}

/// Gaussian field with weights `(1 + k)^{-1}` on the first `modes` sine modes.
pub fn random_field(dynamics: &Dynamics, modes: usize, rng: &mut SimRng) -> Result<Field> {
    let n = dynamics.grid().n();
    let mut c = vec![0.0; n];
    for (k, x) in c.iter_mut().take(modes.min(n)).enumerate() {
        *x = rng.normal() / (1.0 + k as f64);
    }
    dynamics.basis().synthesize(&c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PhysParams;
    use crate::grid::GridSpec;
    use crate::noise::CoeffSpec;
    use crate::spectral::SineBasis;
    use std::sync::Arc;

    fn setup() -> (Dynamics, NoiseModel) {
        let grid = GridSpec::new(20.0, 127).unwrap();
        let basis = Arc::new(SineBasis::new(&grid));
        let params = PhysParams::defaults(&basis).unwrap();
        let dynamics = Dynamics::new(basis.clone(), params, 1e-2).unwrap();
        let spec = CoeffSpec::PowerLaw {
            b0: 0.5,
            q: 3.5,
            modes: 32,
            n_forced: 16,
        };
        (dynamics, NoiseModel::with_basis(basis, &spec, 5).unwrap())
    }

    #[test]
    fn wilson_and_quantiles() {
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo.abs() < 1e-15);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert_eq!(quantile_sorted(&[1.0, 3.0], 0.25), 1.5);
    }

    #[test]
    fn scaling_hits_radius() {
        let (dy, _) = setup();
        let s = gaussian_bump(&dy, 5.0).unwrap();
        assert!((h_norm(&s, &dy).unwrap() - 5.0).abs() < 1e-10);
        let mut rng = SimRng::new(1, 0);
        let r = random_state(&dy, 8, 2.0, &mut rng).unwrap();
        assert!((h_norm(&r, &dy).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn dictionary_directions_are_unit() {
        let (dy, _) = setup();
        let d = DualLipschitzDictionary::new(&dy, 16, 10, 3).unwrap();
        for k in 0..d.len() {
            assert!((d.direction_norm_sq(k) - 1.0).abs() < 1e-12);
        }
        assert!(d.offsets().iter().all(|t| (-1.0..=1.0).contains(t)));
        let big = DualLipschitzDictionary::new(&dy, 16, 20, 3).unwrap();
        assert_eq!(&big.offsets()[..10], d.offsets());
    }

    #[test]
    fn zero_horizon_ensemble_copies_initial_data() {
        let (dy, model) = setup();
        let y = gaussian_bump(&dy, 1.0).unwrap();
        let spec = EnsembleSpec {
            paths: 2,
            t_end: 0.0,
            every: 1,
            keep_terminal: true,
            ..EnsembleSpec::default()
        };
        let ens = run_ensemble(&InitialData::Fixed(y.clone()), &dy, &model, &spec, None).unwrap();
        assert_eq!(ens.times, vec![0.0]);
        for r in &ens.records {
            let t = r.terminal.as_ref().unwrap();
            for (a, b) in t.pos.iter().zip(y.pos.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rate_fit_recovers_power_law() {
        let s: Vec<(f64, f64)> = (0..40).map(|i| (i as f64, (i as f64 + 1.0).powi(-2))).collect();
        let fit = fit_polynomial_rate(&s, 5.0, 1e-4).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-10);
        let flat: Vec<(f64, f64)> = (0..40).map(|i| (i as f64, 0.3)).collect();
        assert!(fit_polynomial_rate(&flat, 5.0, 1e-4).unwrap().slope.abs() < 1e-12);
        assert!(fit_polynomial_rate(&flat[..8], 5.0, 1e-4).is_err());
    }

    #[test]
    fn recurrence_censoring() {
        let entries = [Some(0.0), Some(2.0), None, Some(5.0)];
        let rep = recurrence_stats(&entries, &[(0.0, 0.0)], 0.5, 10.0, &[1.0, 3.0, 10.0], &[1.0, 2.0]).unwrap();
        assert_eq!(rep.censored, 1);
        assert_eq!(rep.hitting[0].1, 0.25);
        assert_eq!(rep.hitting[2].1, 0.75);
        assert!((rep.moments[0].1 - 17.0 / 4.0).abs() < 1e-12);
        assert_eq!(rep.mean_g, 2.0);
    }

    #[test]
    fn probe_inside_ball_needs_no_time() {
        let (dy, model) = setup();
        let quiet = model.scaled(0.0).unwrap();
        let dy0 = Dynamics::new(dy.basis().clone(), dy.params().with_forcing(dy.grid().zeros()), dy.dt()).unwrap();
        let opts = ProbeOptions {
            candidates: 3,
            paths: 5,
            ..ProbeOptions::default()
        };
        let rep = irreducibility_probe(0.1, 1.0, &dy0, &quiet, &opts).unwrap();
        assert_eq!(rep.t_found, 0.0);
        assert_eq!(rep.p0_hat, 1.0);
    }
}
