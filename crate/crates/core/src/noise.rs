//! Additive noise `W = sum_i b_i beta_i e_i` expanded in the discrete sine basis.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, h2_sq, smooth_cutoff, Field, GridSpec, WeightTables};
use crate::rng::{NoiseStream, SimRng};
use crate::spectral::SineBasis;

/// Coefficient sequence as written in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoeffSpec {
    /// `b_i = b0 * i^(-q)` for `i = 1..=modes`.
    PowerLaw {
        b0: f64,
        q: f64,
        modes: usize,
        n_forced: usize,
    },
    Explicit { values: Vec<f64>, n_forced: usize },
}

impl Default for CoeffSpec {
    fn default() -> Self {
        CoeffSpec::PowerLaw {
            b0: 0.5,
            q: 3.5,
            modes: 256,
            n_forced: 64,
        }
    }
}

impl CoeffSpec {
    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            CoeffSpec::PowerLaw { b0, q, modes, .. } => {
                (1..=*modes).map(|i| b0 * (i as f64).powf(-q)).collect()
            }
            CoeffSpec::Explicit { values, .. } => values.clone(),
        }
    }

    pub fn n_forced(&self) -> usize {
        match self {
            CoeffSpec::PowerLaw { n_forced, .. } | CoeffSpec::Explicit { n_forced, .. } => {
                *n_forced
            }
        }
    }
}

/// Summability constants of the coefficient sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSums {
    /// `sum b_i^2`
    pub b1: f64,
    /// `sum b_i^2 ||phi e_i||^2`
    pub b2: f64,
    /// `sum |b_i| ||e_i||_2`
    pub b3: f64,
    /// Log-log slope of the `b3` summands over the upper half of the modes,
    /// measured with the continuum norm of a sine mode on `[-L, L]`.
    pub b3_tail_slope: f64,
}

impl NoiseSums {
    /// Summands decaying no faster than `i^(-1.05)` are treated as a divergent series.
    pub const DIVERGENCE_SLOPE: f64 = -1.05;

    pub fn b3_diverges(&self) -> bool {
        self.b3_tail_slope >= Self::DIVERGENCE_SLOPE
    }
}

/// Basis, coefficients and seed of the driving noise.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    basis: Arc<SineBasis>,
    coeffs: Vec<f64>,
    n_forced: usize,
    seed: u64,
    sums: NoiseSums,
}

/// Noise over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub dt: f64,
    /// `b_i * d beta_i` for the retained modes.
    pub per_mode: Vec<f64>,
}

impl NoiseIncrement {
    pub fn zeros(modes: usize, dt: f64) -> Self {
        Self {
            dt,
            per_mode: vec![0.0; modes],
        }
    }

    /// Physical field `dW = sum_i per_mode_i e_i`.
    pub fn field(&self, model: &NoiseModel) -> Field {
        model.field_from_modes(&self.per_mode)
    }

    /// `||dW||^2`, exact by orthonormality.
    pub fn norm_sq(&self) -> f64 {
        dot(&self.per_mode, &self.per_mode)
    }

    /// Order-sensitive checksum used to compare the increments consumed by coupled systems.
    pub fn checksum(&self) -> u64 {
        self.per_mode.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// The first `k` normalized eigenvectors of the discrete `A`.
pub fn build_basis(grid: &GridSpec, k: usize) -> Result<Vec<Field>> {
    if k == 0 || k > grid.n() {
        return Err(Error::Argument(format!(
            "basis size {k} outside 1..={}",
            grid.n()
        )));
    }
    let basis = SineBasis::new(grid);
    (1..=k).map(|i| basis.mode(i)).collect()
}

impl NoiseModel {
    pub fn new(grid: &GridSpec, spec: &CoeffSpec, seed: u64) -> Result<Self> {
        Self::with_basis(Arc::new(SineBasis::new(grid)), spec, seed)
    }

    pub fn with_basis(basis: Arc<SineBasis>, spec: &CoeffSpec, seed: u64) -> Result<Self> {
        let coeffs = spec.coefficients();
        let n_forced = spec.n_forced();
        let k = coeffs.len();
        if k == 0 || k > basis.len() {
            return Err(Error::Config(format!(
                "noise modes must lie in 1..={}, got {k}",
                basis.len()
            )));
        }
        if n_forced > k {
            return Err(Error::Config(format!(
                "n_forced = {n_forced} exceeds the number of noise modes {k}"
            )));
        }
        if let Some(i) = coeffs.iter().position(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Config(format!(
                "noise coefficient b_{} must be finite and nonnegative",
                i + 1
            )));
        }
        if let Some(i) = coeffs[..n_forced].iter().position(|b| *b == 0.0) {
            return Err(Error::Config(format!(
                "noise coefficient b_{} vanishes but the first {n_forced} modes must be forced",
                i + 1
            )));
        }
        let sums = compute_sums(&basis, &coeffs)?;
        Ok(Self {
            basis,
            coeffs,
            n_forced,
            seed,
            sums,
        })
    }

    /// Same basis and seed with every coefficient multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let values = self.coeffs.iter().map(|b| b * s).collect();
        let n_forced = if s == 0.0 { 0 } else { self.n_forced };
        Self::with_basis(
            self.basis.clone(),
            &CoeffSpec::Explicit { values, n_forced },
            self.seed,
        )
    }

    pub fn basis(&self) -> &Arc<SineBasis> {
        &self.basis
    }

    pub fn grid(&self) -> &GridSpec {
        self.basis.grid()
    }

    /// Number of retained modes `K`.
    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn n_forced(&self) -> usize {
        self.n_forced
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sums(&self) -> NoiseSums {
        self.sums
    }

    pub fn b1(&self) -> f64 {
        self.sums.b1
    }

    pub fn b2(&self) -> f64 {
        self.sums.b2
    }

    pub fn b3(&self) -> f64 {
        self.sums.b3
    }

    /// Smallest `|b_i|` among the first `n` modes.
    pub fn b_min(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.modes() {
            return Err(Error::Argument(format!(
                "forced-mode count {n} outside 1..={}",
                self.modes()
            )));
        }
        Ok(self.coeffs[..n].iter().fold(f64::INFINITY, |m, b| m.min(b.abs())))
    }

    pub fn stream(&self, path: u64) -> NoiseStream {
        NoiseStream::new(self.seed, path, self.modes())
    }

    /// Draws the increment for the stream's current step into `inc`.
    pub fn fill_increment(&self, dt: f64, stream: &mut NoiseStream, inc: &mut NoiseIncrement) {
        stream.fill_standard_normals(&mut inc.per_mode);
        let sq = dt.sqrt();
        for (x, b) in inc.per_mode.iter_mut().zip(&self.coeffs) {
            *x *= b * sq;
        }
        inc.dt = dt;
    }

    pub fn sample_increment(&self, dt: f64, stream: &mut NoiseStream) -> Result<NoiseIncrement> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Argument(format!("time step must be positive, got {dt}")));
        }
        let mut inc = NoiseIncrement::zeros(self.modes(), dt);
        self.fill_increment(dt, stream, &mut inc);
        Ok(inc)
    }

    /// Physical field of a modal vector (only the first `modes()` entries are used).
    pub fn field_from_modes(&self, per_mode: &[f64]) -> Field {
        let mut coeffs = vec![0.0; self.basis.len()];
        let k = per_mode.len().min(coeffs.len());
        coeffs[..k].copy_from_slice(&per_mode[..k]);
        let mut out = vec![0.0; coeffs.len()];
        self.basis
            .synthesize_into(&coeffs, &mut out, &mut self.basis.scratch());
        Field::new(out)
    }

    fn check_rank(&self, n: usize) -> Result<()> {
        if n > self.basis.len() {
            Err(Error::Argument(format!(
                "projection rank {n} exceeds the {} grid modes",
                self.basis.len()
            )))
        } else {
            Ok(())
        }
    }

    /// Orthogonal projection onto `span{e_1, .., e_N}`.
    pub fn project_p(&self, g: &[f64], n: usize) -> Result<Field> {
        self.check_rank(n)?;
        self.grid().check(g)?;
        let mut out = g.to_vec();
        self.basis
            .low_pass_in_place(&mut out, n, &mut self.basis.scratch());
        Ok(Field::new(out))
    }

    /// Complementary projection `Q_N = I - P_N`.
    pub fn project_q(&self, g: &[f64], n: usize) -> Result<Field> {
        let p = self.project_p(g, n)?;
        Ok(Field::new(g.iter().zip(p.iter()).map(|(a, b)| a - b).collect()))
    }

    /// Largest `||Q_N(chi_A f)|| / ||f||_s` over `trials` random test fields.
    ///
    /// Test fields have coefficients `z_i (1 + i)^(-2)` on mode `i` with standard
    /// normal `z_i` over the whole grid. `a_cut = f64::INFINITY` makes the cutoff the identity.
    pub fn qn_cutoff_ratio(
        &self,
        n: usize,
        a_cut: f64,
        s: f64,
        trials: usize,
        rng: &mut SimRng,
    ) -> Result<f64> {
        self.check_rank(n)?;
        if !(a_cut > 0.0) {
            return Err(Error::Argument(format!("cutoff radius must be positive, got {a_cut}")));
        }
        if a_cut.is_finite() && a_cut > self.grid().half_width() {
            return Err(Error::Argument(format!(
                "cutoff radius {a_cut} exceeds the domain half-width {}",
                self.grid().half_width()
            )));
        }
        let len = self.basis.len();
        let coeffs: Vec<Vec<f64>> = (0..trials)
            .map(|_| {
                (0..len)
                    .map(|k| rng.normal() * (2.0 + k as f64).powi(-2))
                    .collect()
            })
            .collect();
        self.qn_cutoff_ratio_on(n, a_cut, s, &coeffs)
    }

    /// [`Self::qn_cutoff_ratio`] on a caller-supplied set of modal coefficient vectors.
    pub fn qn_cutoff_ratio_on(
        &self,
        n: usize,
        a_cut: f64,
        s: f64,
        test_coeffs: &[Vec<f64>],
    ) -> Result<f64> {
        self.check_rank(n)?;
        let grid = *self.grid();
        let chi = grid.sample(|x| smooth_cutoff(x, a_cut));
        let mut scratch = self.basis.scratch();
        let mut field = vec![0.0; grid.n()];
        let mut modal = vec![0.0; grid.n()];
        let mut worst: f64 = 0.0;
        for c in test_coeffs {
            grid.check(c)?;
            let norm_s = self.basis.sobolev_sq(c, s).sqrt();
            if norm_s == 0.0 {
                continue;
            }
            self.basis.synthesize_into(c, &mut field, &mut scratch);
            field.iter_mut().zip(chi.iter()).for_each(|(f, w)| *f *= w);
            self.basis.analyze_into(&field, &mut modal, &mut scratch);
            let tail = dot(&modal[n..], &modal[n..]).sqrt();
            worst = worst.max(tail / norm_s);
        }
        Ok(worst)
    }
}

fn compute_sums(basis: &SineBasis, coeffs: &[f64]) -> Result<NoiseSums> {
    let grid = *basis.grid();
    let weights = WeightTables::new(&grid);
    let phi = weights.phi();
    let (mut b1, mut b2, mut b3) = (0.0, 0.0, 0.0);
    for (i, &b) in coeffs.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let e = basis.mode(i + 1)?;
        let phi_e_sq: f64 = e.iter().zip(phi.iter()).map(|(v, p)| (v * p).powi(2)).sum::<f64>()
            * grid.dx();
        b1 += b * b;
        b2 += b * b * phi_e_sq;
        b3 += b.abs() * h2_sq(&e, &grid)?.sqrt();
    }
    Ok(NoiseSums {
        b1,
        b2,
        b3,
        b3_tail_slope: b3_tail_slope(coeffs, grid.half_width()),
    })
}

/// Least-squares slope of `log(|b_i| * ||e_i||_2)` against `log i` over the upper
/// half of the modes, with `||e_i||_2^2 = 1 + kappa^2 + kappa^4`, `kappa = i pi / 2L`.
fn b3_tail_slope(coeffs: &[f64], half_width: f64) -> f64 {
    let k = coeffs.len();
    let pts: Vec<(f64, f64)> = (k / 2..k)
        .filter(|&i| coeffs[i] > 0.0)
        .map(|i| {
            let idx = (i + 1) as f64;
            let kappa = idx * std::f64::consts::PI / (2.0 * half_width);
            let h2 = (1.0 + kappa * kappa + kappa.powi(4)).sqrt();
            (idx.ln(), (coeffs[i] * h2).ln())
        })
        .collect();
    if pts.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{apply_a, inner, norm_sq};

    fn small_model(k: usize) -> NoiseModel {
        let grid = GridSpec::new(10.0, 127).unwrap();
        let spec = CoeffSpec::PowerLaw {
            b0: 0.5,
            q: 3.5,
            modes: k,
            n_forced: k.min(16),
        };
        NoiseModel::new(&grid, &spec, 7).unwrap()
    }

    #[test]
    fn basis_is_orthonormal_eigenbasis() {
        let grid = GridSpec::new(40.0, 1023).unwrap();
        let basis = build_basis(&grid, 8).unwrap();
        for (i, e) in basis.iter().enumerate() {
            assert!((norm_sq(e, &grid).unwrap() - 1.0).abs() < 1e-12);
            for f in &basis[i + 1..] {
                assert!(inner(e, f, &grid).unwrap().abs() < 1e-12);
            }
            let ae = apply_a(e, &grid).unwrap();
            let lambda = inner(e, &ae, &grid).unwrap();
            let resid = ae
                .iter()
                .zip(e.iter())
                .map(|(a, b)| (a - lambda * b).abs())
                .fold(0.0, f64::max);
            assert!(resid < 1e-10 * lambda);
        }
        assert!(build_basis(&grid, 1024).is_err());
        assert!(build_basis(&grid, 0).is_err());
    }

    #[test]
    fn increments_reconstruct_and_reproduce() {
        let model = small_model(32);
        let mut s1 = model.stream(4);
        let mut s2 = model.stream(4);
        let a = model.sample_increment(0.01, &mut s1).unwrap();
        let b = model.sample_increment(0.01, &mut s2).unwrap();
        assert_eq!(a, b);
        let field = a.field(&model);
        let direct = (0..32).fold(model.grid().zeros(), |acc, i| {
            acc.axpy(a.per_mode[i], &model.basis().mode(i + 1).unwrap())
        });
        for (x, y) in field.iter().zip(direct.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((norm_sq(&field, model.grid()).unwrap() - a.norm_sq()).abs() < 1e-12);
        assert!(model.sample_increment(0.0, &mut s1).is_err());
    }

    #[test]
    fn zero_coefficients_give_zero_noise() {
        let model = small_model(8).scaled(0.0).unwrap();
        let inc = model.sample_increment(0.1, &mut model.stream(0)).unwrap();
        assert!(inc.field(&model).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_unforced_low_modes() {
        let grid = GridSpec::new(10.0, 127).unwrap();
        let spec = CoeffSpec::Explicit {
            values: vec![1.0, 0.0, 1.0],
            n_forced: 2,
        };
        assert!(matches!(NoiseModel::new(&grid, &spec, 0), Err(Error::Config(_))));
        let spec = CoeffSpec::Explicit {
            values: vec![1.0; 200],
            n_forced: 2,
        };
        assert!(NoiseModel::new(&grid, &spec, 0).is_err());
    }

    #[test]
    fn sums_match_direct_summation() {
        let model = small_model(16);
        let b1: f64 = model.coeffs().iter().map(|b| b * b).sum();
        assert!((model.b1() - b1).abs() < 1e-15);
        assert!(model.b2() > 0.0 && model.b2().is_finite());
        assert!(model.b3() > 0.0 && model.b3().is_finite());
    }

    #[test]
    fn slow_decay_is_flagged() {
        let grid = GridSpec::new(40.0, 1023).unwrap();
        let make = |q: f64| {
            let spec = CoeffSpec::PowerLaw {
                b0: 0.5,
                q,
                modes: 256,
                n_forced: 64,
            };
            NoiseModel::new(&grid, &spec, 0).unwrap().sums()
        };
        assert!(make(2.0).b3_diverges());
        assert!(make(3.0).b3_diverges());
        assert!(!make(3.5).b3_diverges());
    }

    #[test]
    fn projections() {
        let model = small_model(32);
        let grid = *model.grid();
        let e1 = model.basis().mode(1).unwrap();
        let p = model.project_p(&e1, 1).unwrap();
        assert!(p.iter().zip(e1.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let e9 = model.basis().mode(9).unwrap();
        let q = model.project_q(&e9, 8).unwrap();
        assert!(q.iter().zip(e9.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let g = grid.sample(|x| (x * 0.7).sin() * (-x * x / 10.0).exp() + 0.1 * x);
        let pg = model.project_p(&g, 20).unwrap();
        let qg = model.project_q(&g, 20).unwrap();
        let total = norm_sq(&g, &grid).unwrap();
        let parts = norm_sq(&pg, &grid).unwrap() + norm_sq(&qg, &grid).unwrap();
        assert!((total - parts).abs() < 1e-10 * total.max(1.0));
        let n = grid.n();
        assert!(model.project_p(&g, n).is_ok());
        assert!(model.project_p(&g, n + 1).is_err());
    }

    #[test]
    fn cutoff_ratio_vanishes_on_full_basis() {
        let grid = GridSpec::new(10.0, 127).unwrap();
        let spec = CoeffSpec::PowerLaw {
            b0: 0.5,
            q: 3.5,
            modes: 127,
            n_forced: 8,
        };
        let model = NoiseModel::new(&grid, &spec, 0).unwrap();
        let mut rng = SimRng::new(3, 0);
        let r = model
            .qn_cutoff_ratio(127, f64::INFINITY, 1.0, 5, &mut rng)
            .unwrap();
        assert!(r < 1e-10);
        let low: Vec<f64> = (0..127).map(|k| if k < 10 { 1.0 } else { 0.0 }).collect();
        let r = model
            .qn_cutoff_ratio_on(10, f64::INFINITY, 1.0, &[low])
            .unwrap();
        assert!(r < 1e-12);
        assert!(model.qn_cutoff_ratio(8, 20.0, 1.0, 1, &mut rng).is_err());
    }
}
