//! Batch experiments behind the `wavemix` subcommands.
//!
//! Each experiment reads a validated [`Manifest`], writes its artifacts into
//! one output directory and returns a [`RunSummary`]. Every artifact carries
//! the manifest hash, crate version and seed.
//!
//! Files and their stable columns or keys:
//!
//! | experiment | files |
//! |---|---|
//! | simulate | `trajectory.csv` (`t,xi_h_sq,xi_psi_sq,e,e_psi,f,f_psi,f_p,f_psi_p`), `trajectory.ndjson`, `checkpoint.json` |
//! | couple | `couple.ndjson` (`sample` and `path` records), `couple.csv`, `foias_prodi.json` |
//! | mixing | `distance.csv` (`t,d,floor`), `mean_energy.csv` (`t,mean_e_zero,mean_e_bump`), `rate_fit.json`, `rate_fit.svg` |
//! | verify | `verify.json`, `verify.ndjson` |
//! | irreducibility | `irreducibility.json` |
//! | spectrum | `spectrum.csv` (`k,lambda,b,b_sq`), `basis.csv` (`x,e_1..e_8`), `sums.json` |
//!
//! All experiments also echo the resolved manifest to `manifest.toml`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentKind, Format, Manifest, Setup};
use crate::coupling::{foias_prodi_check, run_coupled, tv_surrogate, CoupledConfig, CoupledRun, FpVariant};
use crate::dynamics::{continue_trajectory, steps_for, Dynamics, Observer, Phase, System};
use crate::error::{Error, Result};
use crate::functionals::{accumulate, Accumulators, EnergySnapshot, Snapshotter};
use crate::mixing::{
    distance_series, fit_polynomial_rate, gaussian_bump, irreducibility_probe, median, paired_floor, run_ensemble,
    DualLipschitzDictionary, EnsembleSpec, InitialData, ProbeOptions,
};
use crate::output::{create_csv, create_ndjson, loglog_svg, Provenance};
use crate::verify::{run_invariant_suite, VerifyScale};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "WAVEMIX_THREADS";

/// Distances at or below this level are excluded from the rate fit.
pub const DISTANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces `output.formats` when set.
    pub format: Option<Format>,
    /// Checkpoint file to resume `simulate` from.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    pub files: Vec<PathBuf>,
    /// False when the experiment ran but its checks failed (nonzero exit).
    pub passed: bool,
    pub warnings: Vec<String>,
    pub summary: serde_json::Value,
}

/// Thread count from the flags and the environment: `--single-thread` wins,
/// then `WAVEMIX_THREADS`, then `--threads`. `0` means all available cores.
pub fn resolve_threads(threads: Option<usize>, single_thread: bool, env: Option<&str>) -> Result<usize> {
    if single_thread {
        return Ok(1);
    }
    if let Some(v) = env.map(str::trim).filter(|v| !v.is_empty()) {
        return v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a nonnegative integer, got `{v}`")));
    }
    Ok(threads.unwrap_or(0))
}

/// Runs `f` on a dedicated rayon pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the experiment named by `kind` and writes its artifacts.
pub fn run_subcommand(manifest: &Manifest, kind: ExperimentKind, opts: &RunOptions) -> Result<RunSummary> {
    manifest.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut m = manifest.clone();
    m.experiment.kind = kind;
    let setup = m.setup()?;
    let ctx = Ctx {
        manifest: &m,
        setup: &setup,
        prov: Provenance::of(&m),
        dir: &opts.out_dir,
        formats: opts.format.map_or_else(|| m.output.formats.clone(), |f| vec![f]),
    };
    let manifest_file = opts.out_dir.join("manifest.toml");
    std::fs::write(
        &manifest_file,
        format!(
            "# manifest_hash={}\n# version={}\n# seed={}\n{}",
            ctx.prov.manifest_hash,
            ctx.prov.version,
            ctx.prov.seed,
            m.to_toml()
        ),
    )?;
    let mut out = match kind {
        ExperimentKind::Simulate => simulate(&ctx, opts.resume.as_deref()),
        ExperimentKind::Couple => couple(&ctx),
        ExperimentKind::Mixing => mixing(&ctx),
        ExperimentKind::Verify => verify(&ctx),
        ExperimentKind::Irreducibility => irreducibility(&ctx),
        ExperimentKind::Spectrum => spectrum(&ctx),
    }?;
    out.files.insert(0, manifest_file);
    out.warnings = m.warnings()?;
    Ok(out)
}

struct Ctx<'a> {
    manifest: &'a Manifest,
    setup: &'a Setup,
    prov: Provenance,
    dir: &'a Path,
    formats: Vec<Format>,
}

impl Ctx<'_> {
    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.file(name);
        let doc = json!({ "provenance": &self.prov, "report": value });
        std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(path)
    }

    fn summary(&self, kind: ExperimentKind, files: Vec<PathBuf>, passed: bool, summary: serde_json::Value) -> RunSummary {
        RunSummary {
            kind,
            files,
            passed,
            warnings: Vec::new(),
            summary,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct TrajectoryRow {
    t: f64,
    xi_h_sq: f64,
    xi_psi_sq: f64,
    e: f64,
    e_psi: f64,
    f: f64,
    f_psi: f64,
    f_p: f64,
    f_psi_p: f64,
}

impl TrajectoryRow {
    const COLUMNS: [&'static str; 9] = ["t", "xi_h_sq", "xi_psi_sq", "e", "e_psi", "f", "f_psi", "f_p", "f_psi_p"];

    fn new(s: &EnergySnapshot, a: &Accumulators) -> Self {
        Self {
            t: s.t,
            xi_h_sq: s.xi_h_sq,
            xi_psi_sq: s.xi_psi_sq,
            e: s.e,
            e_psi: s.e_psi,
            f: a.f,
            f_psi: a.f_psi,
            f_p: a.f_p,
            f_psi_p: a.f_psi_p,
        }
    }

    fn values(&self) -> [f64; 9] {
        [
            self.t,
            self.xi_h_sq,
            self.xi_psi_sq,
            self.e,
            self.e_psi,
            self.f,
            self.f_psi,
            self.f_p,
            self.f_psi_p,
        ]
    }
}

struct SimObserver {
    every: u64,
    p: f64,
    snapper: Snapshotter,
    last: Option<(EnergySnapshot, Accumulators)>,
    rows: Vec<TrajectoryRow>,
    checkpoint_every: u64,
    checkpoint_file: PathBuf,
    hash: String,
    seed: u64,
}

impl Observer for SimObserver {
    fn observe(&mut self, dynamics: &Dynamics, phase: &Phase) -> Result<()> {
        let step = phase.step();
        if step.is_multiple_of(self.every) {
            let snap = self.snapper.full(dynamics, phase)?;
            let acc = match &self.last {
                Some((prev, acc)) => accumulate(acc, prev, &snap),
                None => Accumulators::start(&snap, dynamics.params().alpha, self.p)?,
            };
            self.rows.push(TrajectoryRow::new(&snap, &acc));
            self.last = Some((snap, acc));
        }
        if self.checkpoint_every > 0 && step > 0 && step.is_multiple_of(self.checkpoint_every) {
            let mut cp = Checkpoint::capture(&self.hash, self.seed, 0, phase);
            if let Some((s, a)) = self.last {
                cp = cp.with_functionals(s, a);
            }
            cp.write(&self.checkpoint_file)?;
        }
        Ok(())
    }
}

/// One path from the Gaussian bump of radius `experiment.initial_radius`.
fn simulate(ctx: &Ctx, resume: Option<&Path>) -> Result<RunSummary> {
    let m = ctx.manifest;
    let dy = &ctx.setup.dynamics;
    let t_end = m.integrator.t_end;
    let steps = steps_for(t_end, dy.dt())?;
    let mut obs = SimObserver {
        every: m.output.every.max(1),
        p: m.stopping.p[0],
        snapper: Snapshotter::new(dy),
        last: None,
        rows: Vec::new(),
        checkpoint_every: m.output.checkpoint_every,
        checkpoint_file: ctx.file("checkpoint.json"),
        hash: ctx.prov.manifest_hash.clone(),
        seed: ctx.prov.seed,
    };
    let phase = match resume {
        Some(file) => {
            let cp = Checkpoint::read(file)?;
            if let (Some(s), Some(a)) = (cp.last_snapshot, cp.accumulators) {
                obs.last = Some((s, a));
            }
            cp.resume(dy, &ctx.prov.manifest_hash)?
        }
        None => dy.phase(&gaussian_bump(dy, m.experiment.initial_radius)?)?,
    };
    let resumed_at = phase.step();
    let final_t = if steps == 0 {
        0.0
    } else {
        let traj = continue_trajectory(phase, dy, System::Primal, &ctx.setup.model, 0, t_end, &mut [&mut obs])?;
        traj.final_phase.t()
    };
    let mut files = Vec::new();
    if ctx.wants(Format::Csv) {
        let path = ctx.file("trajectory.csv");
        let mut w = create_csv(&path, &ctx.prov, &TrajectoryRow::COLUMNS)?;
        for r in &obs.rows {
            w.row(&r.values())?;
        }
        w.finish()?;
        files.push(path);
    }
    if ctx.wants(Format::Ndjson) {
        let path = ctx.file("trajectory.ndjson");
        let mut w = create_ndjson(&path, &ctx.prov)?;
        for r in &obs.rows {
            w.record(&json!({ "record": "sample", "sample": r }))?;
        }
        w.finish()?;
        files.push(path);
    }
    if m.output.checkpoint_every > 0 && obs.checkpoint_file.exists() {
        files.push(obs.checkpoint_file.clone());
    }
    let summary = json!({
        "steps": steps,
        "resumed_at_step": resumed_at,
        "final_t": final_t,
        "rows": obs.rows.len(),
        "final_energy": obs.rows.last().map(|r| r.e),
    });
    Ok(ctx.summary(ExperimentKind::Simulate, files, true, summary))
}

#[derive(Debug, Clone, Serialize)]
struct PathSummary {
    record: &'static str,
    path: u64,
    tau: Option<f64>,
    tau_by_system: [Option<f64>; 3],
    theta: Option<f64>,
    sigma: Option<f64>,
    drift_total: f64,
    tv_surrogate: Option<f64>,
    w_initial: f64,
    w_final: f64,
    fp_part1: Option<f64>,
    fp_part2: Option<f64>,
    post_tau_ratio: Option<f64>,
}

/// Coupled `(u, u', v)` runs on `experiment.paths` noise paths.
fn couple(ctx: &Ctx) -> Result<RunSummary> {
    let m = ctx.manifest;
    let e = &m.experiment;
    let dy = &ctx.setup.dynamics;
    let model = &ctx.setup.model;
    let y0 = gaussian_bump(dy, e.initial_radius)?;
    let y0p = gaussian_bump(dy, e.prime_radius)?;
    let cfg = CoupledConfig {
        rank: e.rank,
        t_end: m.integrator.t_end,
        every: m.output.every.max(1),
        stopping: m.stopping.rules(),
        sigma: m.stopping.sigma(),
        track_prime: true,
        weighted: true,
    };
    let degenerate = e.rank == 0;
    let alpha = dy.params().alpha;
    let b_min = if degenerate { None } else { Some(model.b_min(e.rank)?) };
    let runs: Vec<(CoupledRun, PathSummary)> = (0..e.paths as u64)
        .into_par_iter()
        .map(|path| -> Result<_> {
            let run = run_coupled(&y0, &y0p, dy, model, path, &cfg)?;
            let (fp1, fp2) = if degenerate || run.samples.len() < 2 {
                (None, None)
            } else {
                let p1 = foias_prodi_check(&run, FpVariant::Part1, alpha, 300)?;
                let p2 = foias_prodi_check(&run, FpVariant::Part2 { eps: e.eps, t0: e.t0 }, alpha, 300)?;
                (Some(p1.constant), Some(p2.constant))
            };
            let tv = match b_min {
                Some(b) => Some(tv_surrogate(run.drift_total, b)?),
                None => None,
            };
            let s = PathSummary {
                record: "path",
                path,
                tau: run.tau,
                tau_by_system: run.tau_by_system,
                theta: run.theta,
                sigma: run.sigma(),
                drift_total: run.drift_total,
                tv_surrogate: tv,
                w_initial: run.samples.first().map_or(f64::NAN, |s| s.w_sq.sqrt()),
                w_final: run.samples.last().map_or(f64::NAN, |s| s.w_sq.sqrt()),
                fp_part1: fp1,
                fp_part2: fp2,
                post_tau_ratio: run.post_tau_ratio,
            };
            Ok((run, s))
        })
        .collect::<Result<_>>()?;

    let mut files = Vec::new();
    let path = ctx.file("couple.ndjson");
    let mut w = create_ndjson(&path, &ctx.prov)?;
    for (run, s) in &runs {
        for sample in &run.samples {
            w.record(&json!({ "record": "sample", "path": run.path, "sample": sample }))?;
        }
        w.record(s)?;
    }
    w.finish()?;
    files.push(path);
    if ctx.wants(Format::Csv) {
        let path = ctx.file("couple.csv");
        let cols = [
            "path", "t", "w_sq", "prime_sq", "u_h_sq", "prime_h_sq", "u1", "v1", "psi_u1", "psi_v1", "drift_sq",
            "drift_cum", "active",
        ];
        let mut w = create_csv(&path, &ctx.prov, &cols)?;
        for (run, _) in &runs {
            for s in &run.samples {
                w.row(&[
                    run.path as f64,
                    s.t,
                    s.w_sq,
                    s.prime_sq,
                    s.u_h_sq,
                    s.prime_h_sq,
                    s.u1,
                    s.v1,
                    s.psi_u1,
                    s.psi_v1,
                    s.drift_sq,
                    s.drift_cum,
                    if s.active { 1.0 } else { 0.0 },
                ])?;
            }
        }
        w.finish()?;
        files.push(path);
    }

    let collect = |f: fn(&PathSummary) -> Option<f64>| -> Vec<f64> {
        runs.iter().filter_map(|(_, s)| f(s)).filter(|c| c.is_finite()).collect()
    };
    let c1 = collect(|s| s.fp_part1);
    let c2 = collect(|s| s.fp_part2);
    let spread = |v: &[f64]| -> Option<(f64, f64, f64)> {
        if v.is_empty() {
            return None;
        }
        let med = median(v);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((med, lo, hi))
    };
    let report = if degenerate {
        json!({
            "rank": 0,
            "degenerate": true,
            "note": "N = 0 synchronizes no modes, so v coincides with u'; the Foias-Prodi fit is skipped",
            "paths": runs.len(),
        })
    } else {
        json!({
            "rank": e.rank,
            "degenerate": false,
            "paths": runs.len(),
            "part1": { "finite": c1.len(), "median_min_max": spread(&c1) },
            "part2": { "eps": e.eps, "t0": e.t0, "finite": c2.len(), "median_min_max": spread(&c2) },
        })
    };
    files.push(ctx.write_json("foias_prodi.json", &report)?);
    let stopped = runs.iter().filter(|(r, _)| r.tau.is_some()).count();
    let summary = json!({ "paths": runs.len(), "stopped": stopped, "foias_prodi": report });
    Ok(ctx.summary(ExperimentKind::Couple, files, true, summary))
}

/// Dual-Lipschitz distance between the laws started at `0` and at the bump of
/// radius `experiment.initial_radius`, with common random numbers.
fn mixing(ctx: &Ctx) -> Result<RunSummary> {
    let m = ctx.manifest;
    let e = &m.experiment;
    let dy = &ctx.setup.dynamics;
    let model = &ctx.setup.model;
    let every = m.output.every.max(steps_for(0.5, dy.dt())?).max(1);
    let spec = EnsembleSpec {
        paths: e.paths,
        path_offset: 0,
        t_end: m.integrator.t_end,
        every,
        weighted: false,
        system: System::Primal,
        keep_terminal: false,
    };
    let dict = DualLipschitzDictionary::new(dy, 64, e.dictionary_size.max(1), m.noise.seed ^ 0xd1c7)?;
    let zero = InitialData::Fixed(gaussian_bump(dy, 0.0)?);
    let bump = InitialData::Fixed(gaussian_bump(dy, e.initial_radius)?);
    let a = run_ensemble(&zero, dy, model, &spec, Some(&dict))?;
    let b = run_ensemble(&bump, dy, model, &spec, Some(&dict))?;
    let series = distance_series(&a, &b, &dict)?;
    let floors: Vec<f64> = (0..series.len())
        .map(|i| paired_floor(&a, &b, &dict, i))
        .collect::<Result<_>>()?;
    let mut files = Vec::new();
    let path = ctx.file("distance.csv");
    let mut w = create_csv(&path, &ctx.prov, &["t", "d", "floor"])?;
    for (&(t, d), fl) in series.iter().zip(&floors) {
        w.row(&[t, d, *fl])?;
    }
    w.finish()?;
    files.push(path);
    let (ma, mb) = (a.mean_energy(), b.mean_energy());
    let path = ctx.file("mean_energy.csv");
    let mut w = create_csv(&path, &ctx.prov, &["t", "mean_e_zero", "mean_e_bump"])?;
    for (i, t) in a.times.iter().enumerate() {
        w.row(&[*t, ma[i], mb[i]])?;
    }
    w.finish()?;
    files.push(path);
    if ctx.wants(Format::Ndjson) {
        let path = ctx.file("distance.ndjson");
        let mut w = create_ndjson(&path, &ctx.prov)?;
        for (&(t, d), fl) in series.iter().zip(&floors) {
            w.record(&json!({ "record": "distance", "t": t, "d": d, "floor": fl }))?;
        }
        w.finish()?;
        files.push(path);
    }
    let fit = fit_polynomial_rate(&series, e.burn_in, DISTANCE_FLOOR);
    let fit_json = match &fit {
        Ok(f) => json!({ "fit": f, "constant": f.constant() }),
        Err(err) => json!({ "fit": null, "reason": err.to_string() }),
    };
    files.push(ctx.write_json("rate_fit.json", &fit_json)?);
    let svg_path = ctx.file("rate_fit.svg");
    std::fs::write(
        &svg_path,
        loglog_svg(&series, fit.as_ref().ok(), "dual-Lipschitz distance vs t + 1", &ctx.prov),
    )?;
    files.push(svg_path);
    let failures = a.failures.len() + b.failures.len();
    let summary = json!({
        "paths": e.paths,
        "failures": failures,
        "samples": series.len(),
        "d_first": series.first().map(|s| s.1),
        "d_last": series.last().map(|s| s.1),
        "rate": fit_json,
    });
    Ok(ctx.summary(ExperimentKind::Mixing, files, true, summary))
}

fn verify(ctx: &Ctx) -> Result<RunSummary> {
    let rep = run_invariant_suite(&ctx.setup.dynamics, &ctx.setup.model, VerifyScale::FULL, ctx.prov.seed)?;
    let mut files = vec![ctx.write_json("verify.json", &rep)?];
    if ctx.wants(Format::Ndjson) {
        let path = ctx.file("verify.ndjson");
        let mut w = create_ndjson(&path, &ctx.prov)?;
        for c in &rep.checks {
            w.record(&json!({ "record": "check", "check": c }))?;
        }
        w.finish()?;
        files.push(path);
    }
    let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let summary = json!({ "checks": rep.checks.len(), "failed": failed });
    Ok(ctx.summary(ExperimentKind::Verify, files, rep.passed(), summary))
}

fn irreducibility(ctx: &Ctx) -> Result<RunSummary> {
    let e = &ctx.manifest.experiment;
    let opts = ProbeOptions {
        paths: e.paths,
        seed: ctx.prov.seed,
        ..ProbeOptions::default()
    };
    let rep = irreducibility_probe(e.radius, e.d, &ctx.setup.dynamics, &ctx.setup.model, &opts)?;
    let files = vec![ctx.write_json("irreducibility.json", &rep)?];
    let summary = json!({ "t": rep.t_found, "p0_hat": rep.p0_hat, "positive": rep.positive() });
    Ok(ctx.summary(ExperimentKind::Irreducibility, files, true, summary))
}

/// Number of basis functions written to `basis.csv`.
const BASIS_DUMP: usize = 8;

fn spectrum(ctx: &Ctx) -> Result<RunSummary> {
    let basis = &ctx.setup.basis;
    let model = &ctx.setup.model;
    let eig = basis.eigenvalues();
    let mut files = Vec::new();
    let path = ctx.file("spectrum.csv");
    let mut w = create_csv(&path, &ctx.prov, &["k", "lambda", "b", "b_sq"])?;
    for (i, lambda) in eig.iter().enumerate() {
        let b = model.coeffs().get(i).copied().unwrap_or(0.0);
        w.row(&[(i + 1) as f64, *lambda, b, b * b])?;
    }
    w.finish()?;
    files.push(path);
    let shown = BASIS_DUMP.min(basis.len());
    let modes: Vec<_> = (1..=shown).map(|k| basis.mode(k)).collect::<Result<_>>()?;
    let mut cols = vec!["x".to_string()];
    cols.extend((1..=shown).map(|k| format!("e_{k}")));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let path = ctx.file("basis.csv");
    let mut w = create_csv(&path, &ctx.prov, &cols)?;
    let mut row = vec![0.0; shown + 1];
    for (j, x) in ctx.setup.grid.nodes().into_iter().enumerate() {
        row[0] = x;
        for (k, e) in modes.iter().enumerate() {
            row[k + 1] = e.values()[j];
        }
        w.row(&row)?;
    }
    w.finish()?;
    files.push(path);
    let sums = model.sums();
    let report = json!({
        "sums": sums,
        "b3_diverges": sums.b3_diverges(),
        "noise_modes": model.modes(),
        "n_forced": model.n_forced(),
        "h_modes": ctx.setup.dynamics.h_modes().iter().take(BASIS_DUMP).collect::<Vec<_>>(),
    });
    files.push(ctx.write_json("sums.json", &report)?);
    Ok(ctx.summary(ExperimentKind::Spectrum, files, true, report))
}
