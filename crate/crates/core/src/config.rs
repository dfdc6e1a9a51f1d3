//! TOML experiment manifests.
//!
//! Every section is optional and every key has a default, so an empty document
//! describes the reference configuration. Unknown keys are rejected by name.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::{SigmaConfig, StoppingConfig};
use crate::dynamics::{Dynamics, Integrator, PhysParams, Scheme};
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::noise::{CoeffSpec, NoiseModel};
use crate::spectral::SineBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Half-width `L` of the domain `[-L, L]`.
    pub half_width: f64,
    /// Interior nodes.
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            half_width: 40.0,
            n: 1023,
        }
    }
}

/// One term `amplitude * e_mode` of the deterministic forcing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingTerm {
    pub mode: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    pub gamma: f64,
    pub m: f64,
    /// Defaults to `min(gamma/4, 1/4)`.
    pub alpha: Option<f64>,
    pub forcing: Vec<ForcingTerm>,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            m: 0.5,
            alpha: None,
            forcing: vec![
                ForcingTerm {
                    mode: 1,
                    amplitude: 0.3,
                },
                ForcingTerm {
                    mode: 3,
                    amplitude: 0.2,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub seed: u64,
    pub b0: f64,
    pub q: f64,
    pub modes: usize,
    pub n_forced: usize,
    /// Explicit `b_1, b_2, ...`; overrides the power law when present.
    pub coefficients: Option<Vec<f64>>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            b0: 0.5,
            q: 3.5,
            modes: 256,
            n_forced: 64,
            coefficients: None,
        }
    }
}

impl NoiseConfig {
    pub fn spec(&self) -> CoeffSpec {
        match &self.coefficients {
            Some(values) => CoeffSpec::Explicit {
                values: values.clone(),
                n_forced: self.n_forced,
            },
            None => CoeffSpec::PowerLaw {
                b0: self.b0,
                q: self.q,
                modes: self.modes,
                n_forced: self.n_forced,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 2e-3,
            t_end: 10.0,
            scheme: Scheme::StrangSpectral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingSection {
    pub m_c: f64,
    pub k_c: f64,
    pub l_c: f64,
    pub rho: f64,
    /// Exponents `p` whose stopping times are combined.
    pub p: Vec<f64>,
    pub c_sigma: f64,
    pub p_sigma: f64,
}

impl Default for StoppingSection {
    fn default() -> Self {
        let s = StoppingConfig::default();
        let sigma = SigmaConfig::default();
        Self {
            m_c: s.m_c,
            k_c: s.k_c,
            l_c: s.l_c,
            rho: s.rho,
            p: vec![1.0, 2.0],
            c_sigma: sigma.c_sigma,
            p_sigma: sigma.p_sigma,
        }
    }
}

impl StoppingSection {
    pub fn rules(&self) -> Vec<StoppingConfig> {
        self.p
            .iter()
            .map(|&p| StoppingConfig {
                m_c: self.m_c,
                k_c: self.k_c,
                l_c: self.l_c,
                rho: self.rho,
                p,
            })
            .collect()
    }

    pub fn sigma(&self) -> SigmaConfig {
        SigmaConfig {
            c_sigma: self.c_sigma,
            p_sigma: self.p_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Ndjson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
    /// Sampling interval in steps.
    pub every: u64,
    /// Checkpoint interval in steps for `simulate` (0 disables).
    pub checkpoint_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Ndjson],
            every: 50,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Couple,
    Mixing,
    Verify,
    Irreducibility,
    Spectrum,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Couple => "couple",
            ExperimentKind::Mixing => "mixing",
            ExperimentKind::Verify => "verify",
            ExperimentKind::Irreducibility => "irreducibility",
            ExperimentKind::Spectrum => "spectrum",
        }
    }
}

/// Experiment-specific knobs. Each subcommand reads the keys it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub paths: usize,
    /// `|y_0|_H` of the first initial condition (Gaussian bump).
    pub initial_radius: f64,
    /// `|y_0'|_H` of the second initial condition.
    pub prime_radius: f64,
    /// Projection rank `N` of the auxiliary system.
    pub rank: usize,
    pub eps: f64,
    pub t0: f64,
    pub dictionary_size: usize,
    pub burn_in: f64,
    /// Ball radius `R` of the irreducibility probe.
    pub radius: f64,
    /// Target radius `d` of the irreducibility probe.
    pub d: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Simulate,
            paths: 16,
            initial_radius: 5.0,
            prime_radius: 0.0,
            rank: 64,
            eps: 0.1,
            t0: 1.0,
            dictionary_size: 256,
            burn_in: 5.0,
            radius: 2.0,
            d: 0.5,
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Manifest {
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub noise: NoiseConfig,
    pub integrator: IntegratorConfig,
    pub stopping: StoppingSection,
    pub output: OutputConfig,
    pub experiment: ExperimentConfig,
}

/// Objects built from a validated manifest.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: GridSpec,
    pub basis: Arc<SineBasis>,
    pub dynamics: Dynamics,
    pub model: NoiseModel,
}

impl Manifest {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        let manifest: Manifest = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(key) = unknown.into_iter().next() {
            return Err(Error::UnknownKey(key));
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Checks every invariant that does not need the grid to be built.
    pub fn validate(&self) -> Result<()> {
        self.setup().map(|_| ())?;
        for rule in self.stopping.rules() {
            rule.validate()?;
        }
        if self.stopping.p.is_empty() {
            return Err(Error::Config("stopping.p must list at least one exponent".into()));
        }
        if !(self.integrator.t_end >= 0.0) {
            return Err(Error::Config(format!(
                "integrator.t_end must be nonnegative, got {}",
                self.integrator.t_end
            )));
        }
        crate::dynamics::steps_for(self.integrator.t_end, self.integrator.dt)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.experiment.rank > self.noise_modes() {
            return Err(Error::Config(format!(
                "experiment.rank = {} exceeds the {} noise modes",
                self.experiment.rank,
                self.noise_modes()
            )));
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("output.formats must not be empty".into()));
        }
        Ok(())
    }

    fn noise_modes(&self) -> usize {
        self.noise
            .coefficients
            .as_ref()
            .map_or(self.noise.modes, |c| c.len())
    }

    /// Builds grid, basis, dynamics and noise model.
    pub fn setup(&self) -> Result<Setup> {
        let grid = GridSpec::new(self.grid.half_width, self.grid.n)
            .map_err(|e| Error::Config(e.to_string()))?;
        let basis = Arc::new(SineBasis::new(&grid));
        let mut h = Field::zeros(grid.n());
        for term in &self.physics.forcing {
            let e = basis
                .mode(term.mode)
                .map_err(|e| Error::Config(format!("physics.forcing: {e}")))?;
            h = h.axpy(term.amplitude, &e);
        }
        let p = &self.physics;
        let params = match p.alpha {
            Some(a) => PhysParams::new(p.gamma, p.m, a, h),
            None => PhysParams::with_default_alpha(p.gamma, p.m, h),
        }
        .map_err(as_config)?;
        let integ = Integrator::new(basis.eigenvalues(), p.gamma, self.integrator.dt).map_err(as_config)?;
        let dynamics = Dynamics::with_integrator(basis.clone(), params, integ).map_err(as_config)?;
        let model = NoiseModel::with_basis(basis.clone(), &self.noise.spec(), self.noise.seed).map_err(as_config)?;
        Ok(Setup {
            grid,
            basis,
            dynamics,
            model,
        })
    }

    /// Non-fatal findings, such as a numerically divergent `sum |b_i| ||e_i||_2`.
    pub fn warnings(&self) -> Result<Vec<String>> {
        let setup = self.setup()?;
        let sums = setup.model.sums();
        let mut out = Vec::new();
        if sums.b3_diverges() {
            out.push(format!(
                "noise coefficients violate the summability of sum |b_i| ||e_i||_2: summands decay like i^{:.2}",
                sums.b3_tail_slope
            ));
        }
        if self.experiment.paths < 50
            && matches!(self.experiment.kind, ExperimentKind::Mixing)
        {
            out.push(format!(
                "only {} paths: ensemble statistics have little power",
                self.experiment.paths
            ));
        }
        Ok(out)
    }

    /// SHA-256 of the canonical JSON form of every section except `[output]`.
    pub fn hash(&self) -> String {
        let mut m = self.clone();
        m.output = OutputConfig::default();
        let json = serde_json::to_string(&m).expect("manifest serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Argument(msg) => Error::Config(msg),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let m = Manifest::parse("").unwrap();
        assert_eq!(m, Manifest::default());
        let s = m.setup().unwrap();
        assert_eq!(s.grid.n(), 1023);
        assert_eq!(s.grid.half_width(), 40.0);
        assert_eq!(s.dynamics.params().alpha, 0.125);
        assert_eq!(s.dynamics.dt(), 2e-3);
        assert_eq!(s.model.modes(), 256);
        assert_eq!(s.model.n_forced(), 64);
    }

    #[test]
    fn unknown_keys_are_named() {
        match Manifest::parse("[physics]\ngama = 0.4\n") {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "physics.gama"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Manifest::parse("[nosuch]\nx = 1\n"), Err(Error::UnknownKey(_))));
    }

    #[test]
    fn invariant_violations_are_named() {
        let err = Manifest::parse("[physics]\nm = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("m must lie in (0,1)"), "{err}");
        assert!(Manifest::parse("[grid]\nn = 2\n").is_err());
        assert!(Manifest::parse("[integrator]\ndt = -1.0\n").is_err());
    }

    #[test]
    fn slow_decay_warns() {
        let m = Manifest::parse("[noise]\nq = 2.0\n").unwrap();
        assert!(!m.warnings().unwrap().is_empty());
        assert!(Manifest::default().warnings().unwrap().is_empty());
    }

    #[test]
    fn hash_tracks_physics_not_output() {
        let a = Manifest::default();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.physics.gamma = 0.6;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let m = Manifest::parse("[experiment]\nkind = \"couple\"\nrank = 16\n").unwrap();
        assert_eq!(Manifest::parse(&m.to_toml()).unwrap(), m);
    }
}
