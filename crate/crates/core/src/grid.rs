//! Spatial discretization of the real line.
//!
//! The line is truncated to `[-L, L]` with homogeneous Dirichlet data. Fields
//! are sampled at the `n` interior nodes `x_j = -L + (j + 1) dx`, `dx = 2L/(n+1)`.
//! Derivatives are taken with the forward difference on the `n + 1` cell edges,
//! padding the field with zeros outside the interior.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Truncated spatial domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    half_width: f64,
    n: usize,
    dx: f64,
}

impl GridSpec {
    pub const MIN_POINTS: usize = 8;

    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Argument(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if n < Self::MIN_POINTS {
            return Err(Error::Argument(format!(
                "grid needs at least {} points, got {n}",
                Self::MIN_POINTS
            )));
        }
        let dx = 2.0 * half_width / (n as f64 + 1.0);
        Ok(Self { half_width, n, dx })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Position of interior node `j`.
    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + (j as f64 + 1.0) * self.dx
    }

    /// Midpoint of edge `e`, which joins nodes `e - 1` and `e` (`e = 0..=n`).
    pub fn edge_midpoint(&self, e: usize) -> f64 {
        -self.half_width + (e as f64 + 0.5) * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.n)
    }

    /// Samples `f` at the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new((0..self.n).map(|j| f(self.node(j))).collect())
    }

    pub(crate) fn check(&self, g: &[f64]) -> Result<()> {
        check_len(self.n, g.len())
    }
}

/// Real field sampled at the interior nodes of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field::new(self.values.iter().map(|v| s * v).collect())
    }

    /// `self + s * other`, elementwise.
    pub fn axpy(&self, s: f64, other: &Field) -> Field {
        Field::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    pub fn hadamard(&self, other: &Field) -> Field {
        Field::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        )
    }
}

impl Deref for Field {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl From<Vec<f64>> for Field {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Phase-space point `(u, u_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub pos: Field,
    pub vel: Field,
}

impl State {
    pub fn new(pos: Field, vel: Field) -> Result<Self> {
        check_len(pos.len(), vel.len())?;
        Ok(Self { pos, vel })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            pos: grid.zeros(),
            vel: grid.zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.vel.is_finite()
    }

    pub fn difference(&self, other: &State) -> State {
        State {
            pos: self.pos.axpy(-1.0, &other.pos),
            vel: self.vel.axpy(-1.0, &other.vel),
        }
    }

    pub fn scaled(&self, s: f64) -> State {
        State {
            pos: self.pos.scaled(s),
            vel: self.vel.scaled(s),
        }
    }
}

/// Discrete `L^2` pairing `dx * sum_j f_j g_j`.
pub fn inner(f: &[f64], g: &[f64], grid: &GridSpec) -> Result<f64> {
    grid.check(f)?;
    grid.check(g)?;
    Ok(dot(f, g) * grid.dx)
}

pub fn norm_sq(g: &[f64], grid: &GridSpec) -> Result<f64> {
    inner(g, g, grid)
}

pub(crate) fn dot(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum()
}

/// Applies `A = -d^2/dx^2 + 1` with the three-point stencil and zero padding.
pub fn apply_a(g: &[f64], grid: &GridSpec) -> Result<Field> {
    grid.check(g)?;
    let n = g.len();
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let out = (0..n)
        .map(|j| {
            let left = if j > 0 { g[j - 1] } else { 0.0 };
            let right = if j + 1 < n { g[j + 1] } else { 0.0 };
            -(right - 2.0 * g[j] + left) * inv_dx2 + g[j]
        })
        .collect();
    Ok(Field::new(out))
}

/// Forward difference on the `n + 1` edges. Entry `e` is `(g_e - g_{e-1}) / dx`.
pub fn forward_diff(g: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    grid.check(g)?;
    let n = g.len();
    let inv_dx = 1.0 / grid.dx;
    Ok((0..=n)
        .map(|e| {
            let right = if e < n { g[e] } else { 0.0 };
            let left = if e > 0 { g[e - 1] } else { 0.0 };
            (right - left) * inv_dx
        })
        .collect())
}

/// Second difference at the nodes, zero padded.
pub fn second_diff(g: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    grid.check(g)?;
    let n = g.len();
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    Ok((0..n)
        .map(|j| {
            let left = if j > 0 { g[j - 1] } else { 0.0 };
            let right = if j + 1 < n { g[j + 1] } else { 0.0 };
            (right - 2.0 * g[j] + left) * inv_dx2
        })
        .collect())
}

/// Discrete `H^1` norm squared, `||g||^2 + ||Dg||^2`.
pub fn h1_sq(g: &[f64], grid: &GridSpec) -> Result<f64> {
    let d = forward_diff(g, grid)?;
    Ok(grid.dx * (dot(g, g) + dot(&d, &d)))
}

/// Discrete `H^2` norm squared, `||g||^2 + ||Dg||^2 + ||D^2 g||^2`.
pub fn h2_sq(g: &[f64], grid: &GridSpec) -> Result<f64> {
    let d2 = second_diff(g, grid)?;
    Ok(h1_sq(g, grid)? + grid.dx * dot(&d2, &d2))
}

/// `phi(x) = ln(x^2 + 2)`.
pub fn phi(x: f64) -> f64 {
    (x * x + 2.0).ln()
}

pub fn phi_prime(x: f64) -> f64 {
    2.0 * x / (x * x + 2.0)
}

/// The space-time weight `psi(t, x) = phi(x) (1 - exp(-t / phi(x)))`.
pub fn psi_at(t: f64, x: f64) -> f64 {
    let p = phi(x);
    -p * (-t / p).exp_m1()
}

pub fn psi_t_at(t: f64, x: f64) -> f64 {
    (-t / phi(x)).exp()
}

pub fn psi_x_at(t: f64, x: f64) -> f64 {
    let p = phi(x);
    let s = t / p;
    let e = (-s).exp();
    phi_prime(x) * (-(-s).exp_m1() - s * e)
}

/// Weight values at one time, at the nodes and at the edge midpoints.
#[derive(Debug, Clone)]
pub struct WeightSample {
    pub t: f64,
    pub psi: Vec<f64>,
    pub psi_t: Vec<f64>,
    pub psi_edge: Vec<f64>,
    pub psi_t_edge: Vec<f64>,
}

/// Precomputed `phi` on a grid plus closed-form evaluation of `psi` and its
/// partial derivatives.
#[derive(Debug, Clone)]
pub struct WeightTables {
    grid: GridSpec,
    phi: Field,
    phi_edge: Vec<f64>,
}

impl WeightTables {
    pub fn new(grid: &GridSpec) -> Self {
        let phi_nodes = grid.sample(phi);
        let phi_edge = (0..=grid.n()).map(|e| phi(grid.edge_midpoint(e))).collect();
        Self {
            grid: *grid,
            phi: phi_nodes,
            phi_edge,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn phi(&self) -> &Field {
        &self.phi
    }

    fn check_time(t: f64) -> Result<()> {
        if t >= 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "weight time must be finite and nonnegative, got {t}"
            )))
        }
    }

    pub fn eval_psi(&self, t: f64) -> Result<Field> {
        Self::check_time(t)?;
        Ok(Field::new(
            self.phi.iter().map(|&p| -p * (-t / p).exp_m1()).collect(),
        ))
    }

    pub fn eval_psi_t(&self, t: f64) -> Result<Field> {
        Self::check_time(t)?;
        Ok(Field::new(self.phi.iter().map(|&p| (-t / p).exp()).collect()))
    }

    pub fn eval_psi_x(&self, t: f64) -> Result<Field> {
        Self::check_time(t)?;
        Ok(self.grid.sample(|x| psi_x_at(t, x)))
    }

    /// All weight values needed by the weighted functionals at time `t`.
    pub fn sample(&self, t: f64) -> Result<WeightSample> {
        Self::check_time(t)?;
        let split = |phis: &[f64]| -> (Vec<f64>, Vec<f64>) {
            phis.iter()
                .map(|&p| {
                    let e = (-t / p).exp();
                    (p * (1.0 - e), e)
                })
                .unzip()
        };
        let (psi, psi_t) = split(&self.phi);
        let (psi_edge, psi_t_edge) = split(&self.phi_edge);
        Ok(WeightSample {
            t,
            psi,
            psi_t,
            psi_edge,
            psi_t_edge,
        })
    }
}

/// Quintic smoothstep cutoff: 1 on `[-A/2, A/2]`, 0 outside `[-A, A]`.
pub fn smooth_cutoff(x: f64, a: f64) -> f64 {
    let r = x.abs();
    if r <= 0.5 * a {
        1.0
    } else if r >= a {
        0.0
    } else {
        let s = (r - 0.5 * a) / (0.5 * a);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}
