//! Run configuration: flat `key = value` text with dotted section prefixes.
//!
//! ```text
//! scenario = small_mass_eventual
//! grid.nx = 32
//! grid.ny = 32
//! time.dt = 1e-3
//! time.t_end = 3
//! n0.recipe = gaussian_bump
//! n0.mass = 0.01
//! ```
//!
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::dynamics::{Formulation, TransportSign};
use crate::error::{Error, Result};
use crate::functional_constants::{low_pass_field, EstimateSettings};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::regularize::Sensitivity;
use crate::report::KvReport;
use crate::stokes::random_solenoidal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SmallMassEventual,
    Thm2Global,
    EpsSweep,
    Constants,
    StokesDecay,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::SmallMassEventual => "small_mass_eventual",
            Scenario::Thm2Global => "thm2_global",
            Scenario::EpsSweep => "eps_sweep",
            Scenario::Constants => "constants",
            Scenario::StokesDecay => "stokes_decay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormulationChoice {
    Original,
    Log,
    Both,
}

impl FormulationChoice {
    pub fn formulations(self) -> Vec<Formulation> {
        match self {
            FormulationChoice::Original => vec![Formulation::Original],
            FormulationChoice::Log => vec![Formulation::Log],
            FormulationChoice::Both => vec![Formulation::Original, Formulation::Log],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityRecipe {
    Constant { value: f64 },
    /// `mass` is the total ∫n₀; `background` the fraction of it spread
    /// uniformly, the rest in the bump.
    GaussianBump { center: (f64, f64), width: f64, mass: f64, background: f64 },
    /// `1 + amplitude·f/‖f‖_∞` for low-pass noise f, scaled to `mass`.
    FilteredNoise { seed: u64, cutoff: usize, mass: f64, amplitude: f64 },
    Snapshot { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalShape {
    Constant,
    /// ½(1 + cos(πx/lx)cos(πy/ly))
    Cosine,
    GaussianBump { center: (f64, f64), width: f64 },
}

/// `c₀ = floor + amplitude·shape`, shape ∈ [0, 1]; floor > 0 keeps c₀
/// positive by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalRecipe {
    Shaped { floor: f64, amplitude: f64, shape: SignalShape },
    Snapshot { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum VelocityRecipe {
    Zero,
    RandomSolenoidal { seed: u64, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialRecipe {
    Zero,
    LinearY { amplitude: f64 },
    Cosine { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantSettings {
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub k4: Option<f64>,
    pub ku: Option<f64>,
    pub lambda1: Option<f64>,
    /// constants.txt from an earlier `constants` run
    pub file: Option<PathBuf>,
    /// factor applied to estimated K₂, K₃ inside certificates
    pub inflation: f64,
    /// factor used by the verification pass
    pub verify_inflation: f64,
    pub verify_trials: usize,
    pub estimate: EstimateSettings,
    pub ku_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub grid: GridSpec,
    pub dt: f64,
    pub t_end: f64,
    pub trace_every: usize,
    /// write snapshots every this many records (0: initial and final only)
    pub snapshot_every: usize,
    pub formulation: FormulationChoice,
    pub sensitivities: Vec<Sensitivity>,
    pub transport_sign: TransportSign,
    pub n0: DensityRecipe,
    pub c0: SignalRecipe,
    pub u0: VelocityRecipe,
    pub phi: PotentialRecipe,
    pub mu: Option<f64>,
    pub eta: Option<f64>,
    pub big_t: f64,
    /// rescale n₀ to this fraction of the certified m⋆ before running
    pub mass_fraction: Option<f64>,
    pub constants: ConstantSettings,
    pub monitor_eta: f64,
    pub z4_calibration_runs: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// the rendered key-value input, for provenance
    pub source: KvReport,
}

struct Keys<'a> {
    kv: &'a KvReport,
    used: BTreeSet<String>,
}

impl<'a> Keys<'a> {
    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.kv.get(key)
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}"))),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("{key}: expected a nonnegative integer, got {v:?}"))),
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        Ok(self.usize_or(key, default as usize)? as u64)
    }

    fn str_or(&mut self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    fn pair_or(&mut self, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let parts = list(v).map_err(|_| Error::Config(format!("{key}: expected `x, y`, got {v:?}")))?;
                match parts[..] {
                    [x, y] => Ok((x, y)),
                    _ => Err(Error::Config(format!("{key}: expected two numbers, got {v:?}"))),
                }
            }
        }
    }

    fn path(&mut self, key: &str, base: &Path) -> Option<PathBuf> {
        self.raw(key).map(|p| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
    }
}

fn list(v: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    v.trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let kv = KvReport::parse(text, origin).map_err(|e| Error::Config(e.to_string()))?;
        let mut k = Keys { kv: &kv, used: BTreeSet::new() };

        let scenario = match k.str_or("scenario", "") {
            "small_mass_eventual" => Scenario::SmallMassEventual,
            "thm2_global" => Scenario::Thm2Global,
            "eps_sweep" => Scenario::EpsSweep,
            "constants" => Scenario::Constants,
            "stokes_decay" => Scenario::StokesDecay,
            "" => return Err(Error::Config("missing `scenario`".into())),
            s => return Err(Error::Config(format!("unknown scenario {s:?}"))),
        };

        let nx = k.usize_or("grid.nx", 32)?;
        let ny = k.usize_or("grid.ny", nx)?;
        let lx = k.f64_or("grid.lx", 1.0)?;
        let ly = k.f64_or("grid.ly", lx)?;
        let grid = GridSpec::new(nx, ny, lx, ly).map_err(|e| Error::Config(e.to_string()))?;

        let dt = k.f64_or("time.dt", 1e-3)?;
        let t_end = k.f64_or("time.t_end", 1.0)?;
        let trace_every = k.usize_or("time.trace_every", 10)?;
        let snapshot_every = k.usize_or("time.snapshot_every", 0)?;

        let formulation = match k.str_or("model.formulation", "log") {
            "original" => FormulationChoice::Original,
            "log" => FormulationChoice::Log,
            "both" => FormulationChoice::Both,
            s => return Err(Error::Config(format!("model.formulation: unknown {s:?}"))),
        };
        let sensitivities = match k.str_or("model.sensitivity", "identity") {
            "identity" => vec![Sensitivity::Identity],
            "eps" => {
                let v = k.raw("model.eps").ok_or_else(|| Error::Config("model.sensitivity = eps needs model.eps".into()))?;
                let eps = list(v).map_err(|_| Error::Config(format!("model.eps: bad list {v:?}")))?;
                if eps.is_empty() {
                    return Err(Error::Config("model.eps is empty".into()));
                }
                eps.into_iter().map(Sensitivity::Eps).collect()
            }
            s => return Err(Error::Config(format!("model.sensitivity: unknown {s:?}"))),
        };
        for s in &sensitivities {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let transport_sign = match k.str_or("model.transport_sign", "chain_rule") {
            "chain_rule" => TransportSign::ChainRule,
            "reversed" => TransportSign::Reversed,
            s => return Err(Error::Config(format!("model.transport_sign: unknown {s:?}"))),
        };

        let seed = k.u64_or("seed", 1)?;
        let center = (0.5 * lx, 0.5 * ly);
        let n0 = match k.str_or("n0.recipe", "constant") {
            "constant" => DensityRecipe::Constant { value: k.f64_or("n0.value", 1.0)? },
            "gaussian_bump" => DensityRecipe::GaussianBump {
                center: k.pair_or("n0.center", center)?,
                width: k.f64_or("n0.width", 0.1 * lx.min(ly))?,
                mass: k.f64_or("n0.mass", 1.0)?,
                background: k.f64_or("n0.background", 0.0)?,
            },
            "filtered_noise" => DensityRecipe::FilteredNoise {
                seed: k.u64_or("n0.seed", seed)?,
                cutoff: k.usize_or("n0.cutoff", 4)?,
                mass: k.f64_or("n0.mass", 1.0)?,
                amplitude: k.f64_or("n0.amplitude", 0.5)?,
            },
            "snapshot" => DensityRecipe::Snapshot {
                path: k.path("n0.path", base).ok_or_else(|| Error::Config("n0.recipe = snapshot needs n0.path".into()))?,
            },
            s => return Err(Error::Config(format!("n0.recipe: unknown {s:?}"))),
        };
        let c0 = match k.str_or("c0.recipe", "shaped") {
            "shaped" => {
                let shape = match k.str_or("c0.shape", "constant") {
                    "constant" => SignalShape::Constant,
                    "cosine" => SignalShape::Cosine,
                    "gaussian_bump" => SignalShape::GaussianBump {
                        center: k.pair_or("c0.center", center)?,
                        width: k.f64_or("c0.width", 0.1 * lx.min(ly))?,
                    },
                    s => return Err(Error::Config(format!("c0.shape: unknown {s:?}"))),
                };
                SignalRecipe::Shaped { floor: k.f64_or("c0.floor", 1.0)?, amplitude: k.f64_or("c0.amplitude", 0.0)?, shape }
            }
            "snapshot" => SignalRecipe::Snapshot {
                path: k.path("c0.path", base).ok_or_else(|| Error::Config("c0.recipe = snapshot needs c0.path".into()))?,
            },
            s => return Err(Error::Config(format!("c0.recipe: unknown {s:?}"))),
        };
        let u0 = match k.str_or("u0.recipe", "zero") {
            "zero" => VelocityRecipe::Zero,
            "random_solenoidal" => VelocityRecipe::RandomSolenoidal {
                seed: k.u64_or("u0.seed", seed)?,
                amplitude: k.f64_or("u0.amplitude", 1.0)?,
            },
            s => return Err(Error::Config(format!("u0.recipe: unknown {s:?}"))),
        };
        let phi = match k.str_or("phi.recipe", "linear_y") {
            "zero" => PotentialRecipe::Zero,
            "linear_y" => PotentialRecipe::LinearY { amplitude: k.f64_or("phi.amplitude", 1.0)? },
            "cosine" => PotentialRecipe::Cosine { amplitude: k.f64_or("phi.amplitude", 1.0)? },
            s => return Err(Error::Config(format!("phi.recipe: unknown {s:?}"))),
        };

        let defaults = EstimateSettings::default();
        let constants = ConstantSettings {
            k1: k.f64_opt("constants.K1")?,
            k2: k.f64_opt("constants.K2")?,
            k3: k.f64_opt("constants.K3")?,
            k4: k.f64_opt("constants.K4")?,
            ku: k.f64_opt("constants.Ku")?,
            lambda1: k.f64_opt("constants.lambda1")?,
            file: k.path("constants.file", base),
            inflation: k.f64_or("constants.inflation", 1.25)?,
            verify_inflation: k.f64_or("constants.verify_inflation", 1.1)?,
            verify_trials: k.usize_or("constants.verify_trials", 10_000)?,
            estimate: EstimateSettings {
                ensemble_size: k.usize_or("constants.ensemble", defaults.ensemble_size)?,
                ascent_iterations: k.usize_or("constants.iterations", defaults.ascent_iterations)?,
                step_size: k.f64_or("constants.step", defaults.step_size)?,
                seed: k.u64_or("constants.seed", seed)?,
            },
            ku_trials: k.usize_or("constants.ku_trials", 4)?,
        };

        let cfg = RunConfig {
            scenario,
            grid,
            dt,
            t_end,
            trace_every,
            snapshot_every,
            formulation,
            sensitivities,
            transport_sign,
            n0,
            c0,
            u0,
            phi,
            mu: k.f64_opt("certificate.mu")?,
            eta: k.f64_opt("certificate.eta")?,
            big_t: k.f64_or("certificate.T", 0.0)?,
            mass_fraction: k.f64_opt("certificate.mass_fraction")?,
            constants,
            monitor_eta: k.f64_or("monitor.eta", 1.0)?,
            z4_calibration_runs: k.usize_or("monitor.z4_calibration_runs", 3)?,
            output_dir: k.path("output.dir", base).unwrap_or_else(|| base.join("out")),
            seed,
            source: kv.clone(),
        };
        let unknown: Vec<&str> =
            kv.entries.iter().map(|(k, _)| k.as_str()).filter(|key| !k.used.contains(*key)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("time.dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("time.t_end must be positive, got {}", self.t_end));
        }
        if self.trace_every == 0 {
            return bad("time.trace_every must be at least 1".into());
        }
        match &self.n0 {
            DensityRecipe::Constant { value } if !(*value >= 0.0) => return bad(format!("n0.value must be ≥ 0, got {value}")),
            DensityRecipe::GaussianBump { width, mass, background, .. } => {
                if !(*width > 0.0) || !(*mass >= 0.0) || !(0.0..=1.0).contains(background) {
                    return bad("n0 gaussian_bump needs width > 0, mass ≥ 0, background in [0, 1]".into());
                }
            }
            DensityRecipe::FilteredNoise { cutoff, mass, amplitude, .. } => {
                if *cutoff == 0 || !(*mass >= 0.0) || !(0.0..1.0).contains(amplitude) {
                    return bad("n0 filtered_noise needs cutoff ≥ 1, mass ≥ 0, amplitude in [0, 1)".into());
                }
            }
            DensityRecipe::Snapshot { path } if !path.exists() => {
                return bad(format!("n0.path {} does not exist", path.display()))
            }
            _ => {}
        }
        match &self.c0 {
            SignalRecipe::Shaped { floor, amplitude, shape } => {
                if !(*floor > 0.0) {
                    return bad(format!("c0.floor must be positive, got {floor}"));
                }
                if !(*amplitude >= 0.0) {
                    return bad(format!("c0.amplitude must be ≥ 0, got {amplitude}"));
                }
                if let SignalShape::GaussianBump { width, .. } = shape {
                    if !(*width > 0.0) {
                        return bad("c0.width must be positive".into());
                    }
                }
            }
            SignalRecipe::Snapshot { path } if !path.exists() => {
                return bad(format!("c0.path {} does not exist", path.display()))
            }
            _ => {}
        }
        if let VelocityRecipe::RandomSolenoidal { amplitude, .. } = self.u0 {
            if !(amplitude >= 0.0) {
                return bad("u0.amplitude must be ≥ 0".into());
            }
        }
        if let Some(p) = &self.constants.file {
            if !p.exists() {
                return bad(format!("constants.file {} does not exist", p.display()));
            }
        }
        if !(self.constants.inflation >= 1.0) || !(self.constants.verify_inflation >= 1.0) {
            return bad("constants inflation factors must be ≥ 1".into());
        }
        if let Some(f) = self.mass_fraction {
            if !(f > 0.0) {
                return bad("certificate.mass_fraction must be positive".into());
            }
        }
        if !(self.monitor_eta > 0.0 && self.monitor_eta <= 1.25) {
            return bad(format!("monitor.eta must lie in (0, 5/4], got {}", self.monitor_eta));
        }
        if self.scenario == Scenario::EpsSweep && self.sensitivities.len() < 2 {
            return bad("eps_sweep needs at least two values in model.eps".into());
        }
        Ok(())
    }

    pub fn initial_density(&self) -> Result<ScalarField> {
        let g = self.grid;
        let scaled = |f: ScalarField, mass: f64| -> ScalarField {
            let m = f.integrate();
            if m > 0.0 {
                f.map(|v| v * mass / m)
            } else {
                f
            }
        };
        match &self.n0 {
            DensityRecipe::Constant { value } => Ok(ScalarField::constant(g, *value)),
            DensityRecipe::GaussianBump { center, width, mass, background } => {
                let bump = ScalarField::from_fn(g, |x, y| {
                    (-((x - center.0).powi(2) + (y - center.1).powi(2)) / (2.0 * width * width)).exp()
                });
                let bump = scaled(bump, mass * (1.0 - background));
                let level = mass * background / g.area();
                Ok(bump.map(|v| v + level))
            }
            DensityRecipe::FilteredNoise { seed, cutoff, mass, amplitude } => {
                let f = low_pass_field(g, *cutoff, *seed);
                let f = f.map(|v| v - f.mean());
                let m = f.lp_norm(f64::INFINITY)?.max(1e-300);
                Ok(scaled(f.map(|v| 1.0 + amplitude * v / m), *mass))
            }
            DensityRecipe::Snapshot { path } => {
                let f = ScalarField::read_snapshot(path)?;
                f.grid.same_as(&g)?;
                Ok(f)
            }
        }
    }

    pub fn initial_signal(&self) -> Result<ScalarField> {
        let g = self.grid;
        match &self.c0 {
            SignalRecipe::Shaped { floor, amplitude, shape } => {
                let pi = std::f64::consts::PI;
                let (lx, ly) = (g.lx, g.ly);
                Ok(ScalarField::from_fn(g, |x, y| {
                    let s = match shape {
                        SignalShape::Constant => 1.0,
                        SignalShape::Cosine => 0.5 * (1.0 + (pi * x / lx).cos() * (pi * y / ly).cos()),
                        SignalShape::GaussianBump { center, width } => {
                            (-((x - center.0).powi(2) + (y - center.1).powi(2)) / (2.0 * width * width)).exp()
                        }
                    };
                    floor + amplitude * s
                }))
            }
            SignalRecipe::Snapshot { path } => {
                let f = ScalarField::read_snapshot(path)?;
                f.grid.same_as(&g)?;
                Ok(f)
            }
        }
    }

    pub fn initial_velocity(&self) -> VectorField {
        match self.u0 {
            VelocityRecipe::Zero => VectorField::zeros(self.grid),
            VelocityRecipe::RandomSolenoidal { seed, amplitude } => random_solenoidal(&self.grid, seed, amplitude),
        }
    }

    pub fn potential(&self) -> ScalarField {
        let g = self.grid;
        let pi = std::f64::consts::PI;
        match self.phi {
            PotentialRecipe::Zero => ScalarField::zeros(g),
            PotentialRecipe::LinearY { amplitude } => ScalarField::from_fn(g, |_, y| amplitude * y),
            PotentialRecipe::Cosine { amplitude } => {
                ScalarField::from_fn(g, |x, y| amplitude * (pi * x / g.lx).cos() * (pi * y / g.ly).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("/tmp"), Path::new("test.cfg"))
    }

    #[test]
    fn defaults_and_overrides() {
        let c = parse("scenario = eps_sweep\ngrid.nx = 16\nmodel.sensitivity = eps\nmodel.eps = [0.1, 0.05, 0.025]\n").unwrap();
        assert_eq!(c.grid.ny, 16);
        assert_eq!(c.sensitivities, vec![Sensitivity::Eps(0.1), Sensitivity::Eps(0.05), Sensitivity::Eps(0.025)]);
        assert_eq!(c.constants.inflation, 1.25);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/out"));
    }

    #[test]
    fn validation_errors() {
        for bad in [
            "scenario = constants\ntime.t_end = 0",
            "scenario = constants\ntime.dt = -1",
            "scenario = constants\nc0.floor = 0",
            "scenario = constants\ngrid.nz = 3",
            "scenario = nope",
            "grid.nx = 8",
            "scenario = eps_sweep\nmodel.sensitivity = eps\nmodel.eps = 0.1",
            "scenario = constants\nmodel.sensitivity = eps\nmodel.eps = 1.5",
            "scenario = constants\nn0.recipe = snapshot\nn0.path = missing.csf",
        ] {
            let e = parse(bad).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{bad}: {e}");
        }
    }

    #[test]
    fn recipes_have_requested_mass_and_positivity() {
        let c = parse(
            "scenario = small_mass_eventual\ngrid.nx = 24\nn0.recipe = gaussian_bump\nn0.mass = 0.3\nn0.background = 0.5\n\
             c0.shape = cosine\nc0.floor = 0.2\nc0.amplitude = 1\nu0.recipe = random_solenoidal\nu0.amplitude = 0.5",
        )
        .unwrap();
        let n = c.initial_density().unwrap();
        assert!((n.integrate() - 0.3).abs() < 1e-14);
        assert!(n.min() >= 0.15 - 1e-14);
        let s = c.initial_signal().unwrap();
        assert!(s.min() > 0.2 && s.max() <= 1.2);
        let u = c.initial_velocity();
        assert!((u.max_abs() - 0.5).abs() < 1e-14);
        let c = parse("scenario = constants\ngrid.nx = 24\nn0.recipe = filtered_noise\nn0.mass = 2").unwrap();
        let n = c.initial_density().unwrap();
        assert!((n.integrate() - 2.0).abs() < 1e-13 && n.min() > 0.0);
    }
}
