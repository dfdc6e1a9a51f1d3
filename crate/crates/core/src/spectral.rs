//! Discrete sine basis: the normalized eigenvectors of the discrete `A`.
//!
//! Mode `k` (1-based) is `e_k(x_j) = sqrt(2 / (2L)) sin(k pi (j+1) / (n+1))`, which
//! is orthonormal under [`crate::grid::inner`] and satisfies `A e_k = lambda_k e_k`
//! with `lambda_k = 1 + (2/dx^2)(1 - cos(k pi / (n+1)))`. Coefficient vectors are
//! stored 0-based, so entry `i` belongs to mode `i + 1`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

#[derive(Clone)]
pub struct SineBasis {
    grid: GridSpec,
    plan: Arc<dyn RealToComplex<f64>>,
    norm: f64,
    eigenvalues: Vec<f64>,
}

impl fmt::Debug for SineBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SineBasis")
            .field("grid", &self.grid)
            .field("norm", &self.norm)
            .finish()
    }
}

/// Reusable buffers for transforms.
#[derive(Debug, Clone)]
pub struct Scratch {
    buf: Vec<f64>,
    ext: Vec<f64>,
    spec: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
}

impl SineBasis {
    pub fn new(grid: &GridSpec) -> Self {
        let n = grid.n();
        let plan = RealFftPlanner::new().plan_fft_forward(2 * (n + 1));
        let norm = (2.0 / ((n as f64 + 1.0) * grid.dx())).sqrt();
        let inv_dx2 = 1.0 / (grid.dx() * grid.dx());
        let eigenvalues = (1..=n)
            .map(|k| 1.0 + 2.0 * inv_dx2 * (1.0 - (k as f64 * PI / (n as f64 + 1.0)).cos()))
            .collect();
        Self {
            grid: *grid,
            plan,
            norm,
            eigenvalues,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.n()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.n() == 0
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            buf: vec![0.0; self.len()],
            ext: self.plan.make_input_vec(),
            spec: self.plan.make_output_vec(),
            fft: self.plan.make_scratch_vec(),
        }
    }

    /// Eigenvalues of the discrete `A`, 0-based by mode.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Physical values of mode `k` (1-based).
    pub fn mode(&self, k: usize) -> Result<Field> {
        let n = self.len();
        if k == 0 || k > n {
            return Err(Error::Argument(format!("mode index {k} outside 1..={n}")));
        }
        Ok(Field::new(
            (0..n)
                .map(|j| self.norm * (k as f64 * PI * (j as f64 + 1.0) / (n as f64 + 1.0)).sin())
                .collect(),
        ))
    }

    /// Coefficients `(g, e_k)` for all modes.
    pub fn analyze_into(&self, g: &[f64], coeffs: &mut [f64], scratch: &mut Scratch) {
        debug_assert_eq!(g.len(), self.len());
        self.dst1(g, coeffs, self.norm * self.grid.dx(), scratch);
    }

    /// Physical field `sum_k c_k e_k`.
    pub fn synthesize_into(&self, coeffs: &[f64], g: &mut [f64], scratch: &mut Scratch) {
        debug_assert_eq!(coeffs.len(), self.len());
        self.dst1(coeffs, g, self.norm, scratch);
    }

    /// Unnormalized DST-I `out_k = scale sum_j x_j sin(pi (j+1)(k+1) / (n+1))`, computed
    /// from the real FFT of the odd extension of `x`.
    fn dst1(&self, x: &[f64], out: &mut [f64], scale: f64, scratch: &mut Scratch) {
        let n = x.len();
        let ext = &mut scratch.ext;
        ext[0] = 0.0;
        ext[n + 1] = 0.0;
        ext[1..=n].copy_from_slice(x);
        for (j, v) in x.iter().enumerate() {
            ext[2 * (n + 1) - 1 - j] = -v;
        }
        self.plan
            .process_with_scratch(ext, &mut scratch.spec, &mut scratch.fft)
            .expect("transform buffers are sized by the plan");
        let s = -0.5 * scale;
        for (o, c) in out.iter_mut().zip(&scratch.spec[1..=n]) {
            *o = s * c.im;
        }
    }

    pub fn analyze(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.grid.check(g)?;
        let mut out = vec![0.0; self.len()];
        self.analyze_into(g, &mut out, &mut self.scratch());
        Ok(out)
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Field> {
        self.grid.check(coeffs)?;
        let mut out = vec![0.0; self.len()];
        self.synthesize_into(coeffs, &mut out, &mut self.scratch());
        Ok(Field::new(out))
    }

    /// Keeps the first `keep` coefficients of `g` and zeroes the rest, in place.
    pub fn low_pass_in_place(&self, g: &mut [f64], keep: usize, scratch: &mut Scratch) {
        let mut coeffs = std::mem::take(&mut scratch.buf);
        self.analyze_into(g, &mut coeffs, scratch);
        let keep = keep.min(coeffs.len());
        coeffs[keep..].iter_mut().for_each(|c| *c = 0.0);
        self.synthesize_into(&coeffs, g, scratch);
        scratch.buf = coeffs;
    }

    /// Sobolev norm squared `sum_k lambda_k^s c_k^2` of a coefficient vector.
    pub fn sobolev_sq(&self, coeffs: &[f64], s: f64) -> f64 {
        coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, l)| l.powf(s) * c * c)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{apply_a, inner};

    #[test]
    fn transform_round_trip() {
        let grid = GridSpec::new(40.0, 1023).unwrap();
        let basis = SineBasis::new(&grid);
        let g = grid.sample(|x| (-(x - 3.0) * (x - 3.0) / 4.0).exp() * (1.0 + x.sin()));
        let c = basis.analyze(&g).unwrap();
        let back = basis.synthesize(&c).unwrap();
        for j in 0..grid.n() {
            assert!((back[j] - g[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficients_match_direct_inner_products() {
        let grid = GridSpec::new(10.0, 127).unwrap();
        let basis = SineBasis::new(&grid);
        let g = grid.sample(|x| x.cos() * (-x * x / 8.0).exp());
        let c = basis.analyze(&g).unwrap();
        for k in [1usize, 2, 5, 64, 127] {
            let direct = inner(&g, &basis.mode(k).unwrap(), &grid).unwrap();
            assert!((c[k - 1] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn modes_are_eigenvectors() {
        let grid = GridSpec::new(40.0, 1023).unwrap();
        let basis = SineBasis::new(&grid);
        for k in [1usize, 3, 256, 1023] {
            let e = basis.mode(k).unwrap();
            let ae = apply_a(&e, &grid).unwrap();
            let lambda = basis.eigenvalues()[k - 1];
            let resid: f64 = ae
                .iter()
                .zip(e.iter())
                .map(|(a, b)| (a - lambda * b).abs())
                .fold(0.0, f64::max);
            assert!(resid <= 1e-10 * lambda, "k={k} resid={resid}");
        }
        assert!(basis.mode(0).is_err());
        assert!(basis.mode(1024).is_err());
    }
}
