//! Independent oracles for derived quantities, computed here without the
//! library's own routines wherever possible.

use std::f64::consts::PI;
use std::sync::Arc;

use wavemix::coupling::{foias_prodi_check, run_coupled, tv_surrogate, w_equation_gap, CoupledConfig, FpVariant};
use wavemix::dynamics::{run_trajectory, Dynamics, Integrator, PhysParams, System};
use wavemix::functionals::{accumulate, snapshot, Accumulators, EnergySnapshot, MartingaleTracker};
use wavemix::grid::{apply_a, h1_sq, inner, phi, Field, GridSpec, State, WeightTables};
use wavemix::mixing::{
    dual_lipschitz_from_features, gaussian_bump, random_state, recurrence_stats, scale_to_h_norm,
    DualLipschitzDictionary,
};
use wavemix::noise::{CoeffSpec, NoiseModel};
use wavemix::rng::SimRng;
use wavemix::spectral::SineBasis;

fn small() -> (GridSpec, Arc<SineBasis>) {
    let grid = GridSpec::new(20.0, 511).unwrap();
    let basis = Arc::new(SineBasis::new(&grid));
    (grid, basis)
}

/// `sqrt(2 / (L_tot)) sin(k pi j / (n + 1))`, with `L_tot = (n + 1) dx`.
fn sine(grid: &GridSpec, k: usize) -> Vec<f64> {
    let n = grid.n();
    let len = (n + 1) as f64 * grid.dx();
    (1..=n)
        .map(|j| (2.0 / len).sqrt() * (k as f64 * PI * j as f64 / (n + 1) as f64).sin())
        .collect()
}

#[test]
fn tridiagonal_matvec_reproduces_eigenvalue_formula() {
    let (grid, basis) = small();
    let (n, dx) = (grid.n(), grid.dx());
    for k in [1usize, 2, 17, 128, 511] {
        let e = sine(&grid, k);
        // -u'' + u with Dirichlet ends, written out by hand
        let ae: Vec<f64> = (0..n)
            .map(|j| {
                let l = if j == 0 { 0.0 } else { e[j - 1] };
                let r = if j + 1 == n { 0.0 } else { e[j + 1] };
                (2.0 * e[j] - l - r) / (dx * dx) + e[j]
            })
            .collect();
        let lambda = 1.0 + (2.0 / (dx * dx)) * (1.0 - (k as f64 * PI / (n + 1) as f64).cos());
        let resid: f64 = ae.iter().zip(&e).map(|(a, x)| (a - lambda * x).powi(2)).sum::<f64>().sqrt();
        assert!(resid <= 1e-10 * lambda, "k = {k}: residual {resid}");
        assert!((basis.eigenvalues()[k - 1] - lambda).abs() <= 1e-10 * lambda);
        let lib = apply_a(&e, &grid).unwrap();
        for (a, b) in lib.values().iter().zip(&ae) {
            assert!((a - b).abs() <= 1e-9 * lambda);
        }
    }
}

#[test]
fn library_modes_are_orthonormal_by_direct_summation() {
    let (grid, basis) = small();
    let modes: Vec<Field> = (1..=6).map(|k| basis.mode(k).unwrap()).collect();
    for (i, a) in modes.iter().enumerate() {
        // sign conventions may differ, the span may not
        let hand = sine(&grid, i + 1);
        let c: f64 = a.values().iter().zip(&hand).map(|(x, y)| x * y).sum::<f64>() * grid.dx();
        assert!((c.abs() - 1.0).abs() < 1e-12);
        for (j, b) in modes.iter().enumerate() {
            let s: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>() * grid.dx();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((s - want).abs() < 1e-12, "({i}, {j}): {s}");
        }
    }
}

#[test]
fn h1_norm_is_pairing_with_a() {
    let (grid, _) = small();
    let mut rng = SimRng::new(4, 0);
    for _ in 0..5 {
        let g: Vec<f64> = (0..grid.n()).map(|_| rng.normal()).collect();
        let ag = apply_a(&g, &grid).unwrap();
        let pairing = inner(&g, ag.values(), &grid).unwrap();
        // summation by parts written out: sum (Dg)^2 dx + sum g^2 dx with zero ends
        let dx = grid.dx();
        let mut grad = 0.0;
        let mut prev = 0.0;
        for &x in g.iter().chain(std::iter::once(&0.0)) {
            grad += ((x - prev) / dx).powi(2);
            prev = x;
        }
        let by_hand = grad * dx + g.iter().map(|x| x * x).sum::<f64>() * dx;
        let lib = h1_sq(&g, &grid).unwrap();
        assert!((pairing - by_hand).abs() <= 1e-10 * by_hand);
        assert!((lib - by_hand).abs() <= 1e-10 * by_hand);
    }
}

#[test]
fn weighted_noise_energy_matches_b2_monte_carlo() {
    let (grid, basis) = small();
    let spec = CoeffSpec::PowerLaw {
        b0: 0.5,
        q: 3.5,
        modes: 32,
        n_forced: 8,
    };
    let model = NoiseModel::with_basis(basis, &spec, 21).unwrap();
    let phi2: Vec<f64> = grid.nodes().iter().map(|&x| phi(x).powi(2)).collect();
    // B2 by direct quadrature of each mode
    let b2: f64 = (1..=32)
        .map(|k| {
            let e = sine(&grid, k);
            let w: f64 = e.iter().zip(&phi2).map(|(x, p)| p * x * x).sum::<f64>() * grid.dx();
            model.coeffs()[k - 1].powi(2) * w
        })
        .sum();
    assert!((b2 - model.b2()).abs() <= 1e-9 * b2);
    let dt = 1e-2;
    let mut stream = model.stream(0);
    let draws = 10_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let inc = model.sample_increment(dt, &mut stream).unwrap();
        let dw = inc.field(&model);
        acc += dw.values().iter().zip(&phi2).map(|(x, p)| p * x * x).sum::<f64>() * grid.dx();
    }
    let mean = acc / draws as f64;
    assert!((mean / (b2 * dt) - 1.0).abs() < 0.05, "{mean} vs {}", b2 * dt);
}

#[test]
fn projections_split_norm() {
    let (grid, basis) = small();
    let model = NoiseModel::with_basis(basis, &CoeffSpec::default(), 0).unwrap();
    let mut rng = SimRng::new(8, 0);
    let g: Vec<f64> = (0..grid.n()).map(|_| rng.normal()).collect();
    let total: f64 = g.iter().map(|x| x * x).sum::<f64>() * grid.dx();
    for n in [0usize, 1, 32, 200, 511] {
        let p = model.project_p(&g, n).unwrap();
        let q = model.project_q(&g, n).unwrap();
        let s: f64 = (p.values().iter().map(|x| x * x).sum::<f64>() + q.values().iter().map(|x| x * x).sum::<f64>()) * grid.dx();
        assert!((s - total).abs() <= 1e-10 * total, "N = {n}");
    }
}

fn default_dynamics(grid: &GridSpec, basis: &Arc<SineBasis>, dt: f64) -> Dynamics {
    let _ = grid;
    Dynamics::new(basis.clone(), PhysParams::defaults(basis).unwrap(), dt).unwrap()
}

#[test]
fn velocity_along_first_mode_has_unit_energy() {
    let (grid, basis) = small();
    let dy = default_dynamics(&grid, &basis, 1e-2);
    let state = State {
        pos: grid.zeros(),
        vel: Field::new(sine(&grid, 1)),
    };
    let snap = snapshot(&state, 0.0, dy.params(), &WeightTables::new(&grid)).unwrap();
    assert!((snap.xi_h_sq - 1.0).abs() < 1e-10);
    assert_eq!(snap.xi_psi_sq, 0.0);
}

#[test]
fn trapezoid_accumulator_matches_fine_quadrature() {
    // E(t) piecewise linear between random knots; the trapezoid rule is exact
    // on each piece, so the coarse accumulator must match a fine Riemann sum.
    let mut rng = SimRng::new(2, 0);
    let knots: Vec<(f64, f64)> = (0..20).map(|i| (0.5 * i as f64, 1.0 + 3.0 * rng.uniform())).collect();
    let snap = |t: f64, e: f64| EnergySnapshot {
        t,
        xi_h_sq: e,
        xi_psi_sq: 0.0,
        e,
        e_psi: e,
    };
    let mut acc = Accumulators::start(&snap(knots[0].0, knots[0].1), 0.125, 1.0).unwrap();
    for w in knots.windows(2) {
        acc = accumulate(&acc, &snap(w[0].0, w[0].1), &snap(w[1].0, w[1].1));
    }
    let fine = 200_000;
    let t_end = knots.last().unwrap().0;
    let h = t_end / fine as f64;
    let value = |t: f64| {
        let i = ((t / 0.5).floor() as usize).min(knots.len() - 2);
        let (a, b) = (knots[i], knots[i + 1]);
        a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
    };
    let reference: f64 = (0..fine).map(|k| value((k as f64 + 0.5) * h)).sum::<f64>() * h;
    assert!((acc.int_e - reference).abs() <= 1e-6 * reference);
    assert!((acc.f - (knots.last().unwrap().1 + 0.125 * reference)).abs() <= 1e-6 * acc.f);
}

#[test]
fn martingale_increment_variance_matches_quadratic_variation() {
    let (grid, basis) = small();
    let model = NoiseModel::with_basis(basis.clone(), &CoeffSpec::default().clone(), 5).unwrap();
    let dy = default_dynamics(&grid, &basis, 1e-2);
    let y = gaussian_bump(&dy, 2.0).unwrap();
    let alpha = dy.params().alpha;
    let z: Vec<f64> = y.vel.iter().zip(y.pos.iter()).map(|(v, u)| v + alpha * u).collect();
    let zc = basis.analyze(&z).unwrap();
    let mut stream = model.stream(3);
    let mut dms = Vec::new();
    let mut qv = 0.0;
    for _ in 0..1000 {
        let inc = model.sample_increment(1e-2, &mut stream).unwrap();
        let mut t = MartingaleTracker::default();
        t.update_modal(&zc, &inc, model.coeffs());
        dms.push(t.m);
        qv = t.qv;
    }
    let mean = dms.iter().sum::<f64>() / dms.len() as f64;
    let var = dms.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (dms.len() - 1) as f64;
    assert!((var / qv - 1.0).abs() <= 0.1, "var {var} vs qv {qv}");
}

#[test]
fn dictionary_distance_of_point_masses_by_enumeration() {
    let (grid, basis) = small();
    let dy = default_dynamics(&grid, &basis, 1e-2);
    let dict = DualLipschitzDictionary::new(&dy, 16, 40, 3).unwrap();
    let mut rng = SimRng::new(1, 0);
    let y = random_state(&dy, 16, 1.0, &mut rng).unwrap();
    let yp = random_state(&dy, 16, 2.0, &mut rng).unwrap();
    let fy = dict.features_of_state(&y, &dy).unwrap();
    let fyp = dict.features_of_state(&yp, &dy).unwrap();
    let mut best: f64 = 0.0;
    for k in 0..dict.len() {
        let a = 0.5 * (fy[k] + dict.offsets()[k]).tanh();
        let b = 0.5 * (fyp[k] + dict.offsets()[k]).tanh();
        best = best.max((a - b).abs());
    }
    let lib = dual_lipschitz_from_features(&[fy.as_slice()], &[fyp.as_slice()], &dict, dict.len()).unwrap();
    assert_eq!(lib, best);
    // each F_k is 1/2-Lipschitz in the H norm of unit directions
    let sep = {
        let d = y.difference(&yp);
        wavemix::mixing::h_norm(&d, &dy).unwrap()
    };
    assert!(lib <= 0.5 * sep + 1e-12);
}

#[test]
fn full_projection_decays_at_least_at_rate_alpha() {
    let (grid, basis) = small();
    let dy = default_dynamics(&grid, &basis, 1e-2);
    let n = grid.n();
    let spec = CoeffSpec::PowerLaw {
        b0: 0.5,
        q: 1.0,
        modes: n,
        n_forced: n,
    };
    let model = NoiseModel::with_basis(basis, &spec, 0).unwrap();
    let y0 = gaussian_bump(&dy, 1.0).unwrap();
    let y1 = State::zeros(&grid);
    let cfg = CoupledConfig {
        rank: n,
        t_end: 10.0,
        every: 10,
        track_prime: false,
        weighted: false,
        ..Default::default()
    };
    let run = run_coupled(&y0, &y1, &dy, &model, 0, &cfg).unwrap();
    let alpha = dy.params().alpha;
    let w0 = run.samples[0].w_sq;
    for s in &run.samples {
        assert!(s.w_sq <= w0 * (-alpha * s.t).exp() * (1.0 + 1e-9), "t = {}", s.t);
    }
}

#[test]
fn difference_equation_agrees_with_coupled_pair() {
    let (grid, basis) = small();
    let dy = default_dynamics(&grid, &basis, 1e-3);
    let model = NoiseModel::with_basis(basis, &CoeffSpec::default(), 0).unwrap();
    let y0 = gaussian_bump(&dy, 2.0).unwrap();
    let y1 = gaussian_bump(&dy, 1.0).unwrap();
    let gap = w_equation_gap(&y0, &y1, &dy, &model, 16, 1000).unwrap();
    assert!(gap <= 1e-8, "{gap}");
}

#[test]
fn coupled_systems_consume_identical_noise() {
    let (grid, basis) = small();
    let dy = default_dynamics(&grid, &basis, 1e-2);
    let model = NoiseModel::with_basis(basis, &CoeffSpec::default(), 0).unwrap();
    let y0 = gaussian_bump(&dy, 2.0).unwrap();
    let cfg = CoupledConfig {
        rank: 8,
        t_end: 2.0,
        ..Default::default()
    };
    let run = run_coupled(&y0, &State::zeros(&grid), &dy, &model, 4, &cfg).unwrap();
    assert_eq!(run.checksums[0], run.checksums[1]);
    assert_eq!(run.checksums[0], run.checksums[2]);
}

#[test]
fn linear_run_needs_no_foias_prodi_constant() {
    let (grid, basis) = small();
    let params = PhysParams::defaults(&basis).unwrap();
    let integ = Integrator::new(basis.eigenvalues(), params.gamma, 1e-2).unwrap().without_nonlinearity();
    let dy = Dynamics::with_integrator(basis.clone(), params, integ).unwrap();
    let model = NoiseModel::with_basis(basis, &CoeffSpec::default(), 0).unwrap();
    let cfg = CoupledConfig {
        rank: 4,
        t_end: 5.0,
        ..Default::default()
    };
    let run = run_coupled(&gaussian_bump(&dy, 1.0).unwrap(), &State::zeros(&grid), &dy, &model, 0, &cfg).unwrap();
    let rep = foias_prodi_check(&run, FpVariant::Part1, dy.params().alpha, 100).unwrap();
    assert!(rep.constant <= 1e-9, "{}", rep.constant);
    assert!(!rep.violation);
}

#[test]
fn surrogate_is_linear_in_small_separation() {
    let (grid, basis) = small();
    let dy = default_dynamics(&grid, &basis, 1e-2);
    let model = NoiseModel::with_basis(basis, &CoeffSpec::default(), 0).unwrap();
    let y0 = gaussian_bump(&dy, 1.0).unwrap();
    let mut rng = SimRng::new(9, 0);
    let dir = random_state(&dy, 16, 1.0, &mut rng).unwrap();
    let cfg = CoupledConfig {
        rank: 2,
        t_end: 10.0,
        track_prime: false,
        weighted: false,
        ..Default::default()
    };
    let b_min = model.b_min(2).unwrap();
    let pts: Vec<(f64, f64)> = [0.01, 0.02, 0.04]
        .iter()
        .map(|&d| {
            let p = scale_to_h_norm(&dir, &dy, d).unwrap();
            let y1 = State {
                pos: y0.pos.axpy(1.0, &p.pos),
                vel: y0.vel.axpy(1.0, &p.vel),
            };
            let run = run_coupled(&y0, &y1, &dy, &model, 0, &cfg).unwrap();
            (d.ln(), tv_surrogate(run.drift_total, b_min).unwrap().ln())
        })
        .collect();
    let slope = (pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
    assert!((slope - 1.0).abs() < 0.1, "{slope}");
}

#[test]
fn unforced_noiseless_energy_never_increases() {
    let (grid, basis) = small();
    let params = PhysParams::defaults(&basis).unwrap().with_forcing(grid.zeros());
    let dy = Dynamics::new(basis.clone(), params, 1e-2).unwrap();
    let model = NoiseModel::with_basis(basis, &CoeffSpec::default(), 0).unwrap();
    let snap = wavemix::functionals::Snapshotter::new(&dy);
    let mut last = f64::INFINITY;
    let mut obs = |d: &Dynamics, p: &wavemix::dynamics::Phase| -> wavemix::Result<()> {
        let e = snap.unweighted(d, p).e;
        assert!(e <= last * (1.0 + 1e-12), "E rose to {e} from {last}");
        last = e;
        Ok(())
    };
    run_trajectory(&gaussian_bump(&dy, 2.0).unwrap(), &dy, System::Truncated, &model, 0, 20.0, &mut [&mut obs]).unwrap();
}

#[test]
fn hitting_probability_is_monotone_in_horizon() {
    let entries = [Some(0.0), Some(3.0), None, Some(7.5), Some(1.0)];
    let rep = recurrence_stats(&entries, &[(1.0, 0.0); 5], 0.5, 10.0, &[0.0, 1.0, 5.0, 10.0], &[1.0]).unwrap();
    let probs: Vec<f64> = rep.hitting.iter().map(|h| h.1).collect();
    assert!(probs.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(probs, vec![0.2, 0.4, 0.6, 0.8]);
    // E[min(tau, 10)] by hand
    assert!((rep.moments[0].1 - (0.0 + 3.0 + 10.0 + 7.5 + 1.0) / 5.0).abs() < 1e-12);
}
