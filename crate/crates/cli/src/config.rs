//! Experiment configuration: TOML sections of `key = value` pairs, every field
//! optional with a default.

use std::path::{Path, PathBuf};

use kskdv_core::{CarlemanParams, Grid, Interval, PenalizedConfig, Regions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Integer, or a decimal string for values beyond the TOML integer range.
    #[serde(with = "seed_repr")]
    pub seed: u64,
    /// Output directory; relative paths resolve against the working directory.
    pub output: String,
    pub grid: GridSection,
    pub model: ModelSection,
    pub game: GameSection,
    pub regions: RegionSection,
    pub carleman: CarlemanSection,
    pub initial: InitialSection,
    pub targets: TargetSection,
    pub control: ControlSection,
    pub picard: PicardSection,
    pub simulate: SimulateSection,
    pub saddle: SaddleSection,
    pub stackelberg: StackelbergSection,
    pub observability: ObservabilitySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output: "out".into(),
            grid: GridSection::default(),
            model: ModelSection::default(),
            game: GameSection::default(),
            regions: RegionSection::default(),
            carleman: CarlemanSection::default(),
            initial: InitialSection::default(),
            targets: TargetSection::default(),
            control: ControlSection::default(),
            picard: PicardSection::default(),
            simulate: SimulateSection::default(),
            saddle: SaddleSection::default(),
            stackelberg: StackelbergSection::default(),
            observability: ObservabilitySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Interior grid points.
    pub n: usize,
    /// Tree depth `N`.
    pub depth: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: 24, depth: 7 }
    }
}

/// A constant, or a CSV table with one row of `n` values per time cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Constant(f64),
    Table { file: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub k: f64,
    pub eta: f64,
    pub horizon: f64,
    pub a: CoefficientSpec,
    pub b: CoefficientSpec,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { k: 1.0, eta: 0.01, horizon: 0.1, a: CoefficientSpec::Constant(0.0), b: CoefficientSpec::Constant(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub beta: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl Default for GameSection {
    fn default() -> Self {
        Self { beta: 1e6, delta1: 1e6, delta2: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    pub o: [f64; 2],
    pub d: [f64; 2],
    pub od0: [f64; 2],
    pub od1: [f64; 2],
    pub od2: [f64; 2],
    /// Auxiliary set of the weights; derived from the other regions if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<[f64; 2]>,
}

impl Default for RegionSection {
    fn default() -> Self {
        Self { o: [0.2, 0.5], d: [0.6, 0.8], od0: [0.3, 0.7], od1: [0.55, 0.75], od2: [0.6, 0.9], b: None }
    }
}

impl RegionSection {
    pub fn regions(&self) -> Regions {
        let iv = |p: [f64; 2]| Interval::new(p[0], p[1]);
        Regions {
            o: iv(self.o),
            d: iv(self.d),
            od0: iv(self.od0),
            od1: iv(self.od1),
            od2: iv(self.od2),
            b: self.b.map(iv),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanSection {
    /// Defaults to `max(1, 2(T + T²))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub mu: f64,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        Self { lambda: None, mu: 2.0 }
    }
}

impl CarlemanSection {
    pub fn params(&self, horizon: f64) -> CarlemanParams {
        let base = CarlemanParams::default_for(horizon);
        CarlemanParams { lambda: self.lambda.unwrap_or(base.lambda), mu: self.mu }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialProfile {
    /// `Σ_{m ≤ modes} ξ_m sin(mπx)/m` with standard Gaussian `ξ_m`.
    SmoothRandom,
    /// Independent standard Gaussian grid values.
    NodalRandom,
    /// `16x²(1 − x)²`.
    Bump,
    Zero,
    /// One value per grid point, comma or whitespace separated.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub profile: InitialProfile,
    pub modes: usize,
    pub amplitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { profile: InitialProfile::SmoothRandom, modes: 6, amplitude: 1.0, file: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Zero,
    /// `value` on each observation region, at every node.
    Constant,
    /// `ρ⁻¹·r` with independent Gaussian `r` of standard deviation `amplitude`.
    WeightedRandom,
    /// CSV rows `order,level,node,index,value`; absent entries are zero.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub kind: TargetKind,
    pub value: f64,
    pub amplitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self { kind: TargetKind::Zero, value: 0.0, amplitude: 1.0, file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub epsilon: f64,
    pub schedule: Vec<f64>,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        let d = PenalizedConfig::default();
        Self { epsilon: d.epsilon, schedule: d.epsilon_schedule, cg_tol: d.cg_tol, cg_max_iter: d.cg_max_iter }
    }
}

impl ControlSection {
    pub fn penalized(&self) -> PenalizedConfig {
        PenalizedConfig {
            epsilon: self.epsilon,
            cg_tol: self.cg_tol,
            cg_max_iter: self.cg_max_iter,
            epsilon_schedule: self.schedule.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSection {
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: f64,
}

impl Default for PicardSection {
    fn default() -> Self {
        let d = kskdv_core::PicardOptions::default();
        Self { tol: d.tol, max_iter: d.max_iter, relaxation: d.relaxation }
    }
}

impl PicardSection {
    pub fn options(&self) -> kskdv_core::PicardOptions {
        kskdv_core::PicardOptions { tol: self.tol, max_iter: self.max_iter, relaxation: self.relaxation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Zero,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Leader controls, follower control and disturbances.
    pub sources: DataKind,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { sources: DataKind::Zero }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaddleSection {
    pub leaders: DataKind,
    pub directions: usize,
    pub inequalities: usize,
}

impl Default for SaddleSection {
    fn default() -> Self {
        Self { leaders: DataKind::Random, directions: 5, inequalities: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackelbergSection {
    /// Independent `(y0, targets)` draws; the first uses the configured data.
    pub instances: usize,
}

impl Default for StackelbergSection {
    fn default() -> Self {
        Self { instances: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservabilitySection {
    pub samples: usize,
}

impl Default for ObservabilitySection {
    fn default() -> Self {
        Self { samples: 100 }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub n: Option<usize>,
    pub depth: Option<usize>,
    pub epsilon: Option<f64>,
}

impl ExperimentConfig {
    /// Parses without validating.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            CliError::Parse { line, message: e.message().trim().to_string() }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies command-line overrides. A final `epsilon` drops larger-or-equal
    /// schedule entries below it and appends it.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.output {
            self.output = out.to_string_lossy().into_owned();
        }
        if let Some(n) = o.n {
            self.grid.n = n;
        }
        if let Some(depth) = o.depth {
            self.grid.depth = depth;
        }
        if let Some(eps) = o.epsilon {
            self.control.epsilon = eps;
            self.control.schedule.retain(|&e| e > eps);
            self.control.schedule.push(eps);
        }
    }

    /// Every violated requirement, each naming its field.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut nested = Vec::new();
        let mut check = |ok: bool, field: &str, msg: String| {
            if !ok {
                out.push(format!("{field}: {msg}"));
            }
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let unit = |v: f64| v.is_finite() && v > 0.0 && v < 1.0;

        let g = &self.grid;
        check(g.n >= 8, "grid.n", format!("needs at least 8 interior points, got {}", g.n));
        check((1..=kskdv_core::noise::MAX_DEPTH).contains(&g.depth), "grid.depth", format!("must lie in 1..=20, got {}", g.depth));

        let m = &self.model;
        check(positive(m.k), "model.k", format!("must be positive, got {}", m.k));
        check(positive(m.eta), "model.eta", format!("must be positive, got {}", m.eta));
        check(positive(m.horizon), "model.horizon", format!("T must be positive, got {}", m.horizon));
        for (name, c) in [("model.a", &m.a), ("model.b", &m.b)] {
            if let CoefficientSpec::Constant(v) = c {
                check(v.is_finite(), name, format!("must be finite, got {v}"));
            }
        }

        for (name, v) in [("game.beta", self.game.beta), ("game.delta1", self.game.delta1), ("game.delta2", self.game.delta2)] {
            check(positive(v), name, format!("must be positive, got {v}"));
        }

        if g.n >= 8 {
            let grid = Grid::new(g.n).expect("size checked");
            for e in self.regions.regions().violations(&grid) {
                nested.push(format!("regions: {e}"));
            }
        }

        let c = &self.carleman;
        if let Some(l) = c.lambda {
            check(l.is_finite() && l >= 1.0, "carleman.lambda", format!("must be at least 1, got {l}"));
        }
        check(c.mu.is_finite() && c.mu >= 1.0, "carleman.mu", format!("must be at least 1, got {}", c.mu));

        let i = &self.initial;
        check(i.modes >= 1, "initial.modes", "must be at least 1".into());
        check(i.amplitude.is_finite() && i.amplitude >= 0.0, "initial.amplitude", format!("must be finite and nonnegative, got {}", i.amplitude));
        check(i.profile != InitialProfile::File || i.file.is_some(), "initial.file", "required when profile = \"file\"".into());

        let t = &self.targets;
        check(t.value.is_finite(), "targets.value", format!("must be finite, got {}", t.value));
        check(t.amplitude.is_finite() && t.amplitude >= 0.0, "targets.amplitude", format!("must be finite and nonnegative, got {}", t.amplitude));
        check(t.kind != TargetKind::File || t.file.is_some(), "targets.file", "required when kind = \"file\"".into());

        for e in self.control.penalized().violations() {
            nested.push(format!("control: {e}"));
        }

        let p = &self.picard;
        check(unit(p.tol), "picard.tol", format!("must lie in (0, 1), got {}", p.tol));
        check(p.max_iter > 0, "picard.max_iter", "must be positive".into());
        check(p.relaxation > 0.0 && p.relaxation <= 1.0, "picard.relaxation", format!("must lie in (0, 1], got {}", p.relaxation));

        check(self.saddle.directions > 0, "saddle.directions", "must be positive".into());
        check(self.saddle.inequalities > 0, "saddle.inequalities", "must be positive".into());
        check(self.stackelberg.instances > 0, "stackelberg.instances", "must be positive".into());
        check(self.observability.samples > 0, "observability.samples", "must be positive".into());
        out.extend(nested);
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(v))
        }
    }

    /// Digest of the configuration without its output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output.clear();
        crate::output::sha256_hex(c.to_toml().as_bytes())
    }
}

mod seed_repr {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v).map_err(|_| D::Error::custom(format!("seed must be nonnegative, got {v}"))),
            Repr::Text(t) => t.parse().map_err(|_| D::Error::custom(format!("seed must be an unsigned integer, got {t:?}"))),
        }
    }
}

/// Reads, parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    let config = ExperimentConfig::from_toml(&text)?;
    config.validate()?;
    Ok(config)
}
