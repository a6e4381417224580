//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use qgemm_lab::kernels::{PermMode, TileParams, VariantFlags};
use qgemm_lab::perf_model::CostWeights;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One problem shape `(M, K, N, g)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct Shape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub g: usize,
}

impl From<[usize; 4]> for Shape {
    fn from([m, k, n, g]: [usize; 4]) -> Self {
        Shape { m, k, n, g }
    }
}

impl From<Shape> for [usize; 4] {
    fn from(s: Shape) -> Self {
        [s.m, s.k, s.n, s.g]
    }
}

impl Shape {
    pub fn validate(&self) -> Result<(), CliError> {
        let Shape { m, k, n, g } = *self;
        if m == 0 || k == 0 || n == 0 || g == 0 {
            return Err(CliError::Shape(format!(
                "shape {self}: all dimensions must be positive"
            )));
        }
        if k % 8 != 0 || n % 8 != 0 || k % g != 0 {
            return Err(CliError::Shape(format!(
                "shape {self}: need K % 8 == 0, N % 8 == 0 and g dividing K"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.m, self.k, self.n, self.g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileConfig {
    pub bk: usize,
    pub m_count: usize,
    pub threads: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileParams::default().into()
    }
}

impl From<TileParams> for TileConfig {
    fn from(t: TileParams) -> Self {
        TileConfig {
            bk: t.bk,
            m_count: t.m_count,
            threads: t.threads,
        }
    }
}

impl From<TileConfig> for TileParams {
    fn from(t: TileConfig) -> Self {
        TileParams::new(t.bk, t.m_count, t.threads)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub atomic: f64,
    pub load16: f64,
    pub load32: f64,
    pub valu_scalar: f64,
    pub valu_packed: f64,
    pub shared: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        CostWeights::default().into()
    }
}

impl From<CostWeights> for WeightsConfig {
    fn from(w: CostWeights) -> Self {
        WeightsConfig {
            atomic: w.w_atomic,
            load16: w.w_load16,
            load32: w.w_load32,
            valu_scalar: w.w_valu_scalar,
            valu_packed: w.w_valu_packed,
            shared: w.w_shared,
        }
    }
}

impl From<WeightsConfig> for CostWeights {
    fn from(w: WeightsConfig) -> Self {
        CostWeights {
            w_atomic: w.atomic,
            w_load16: w.load16,
            w_load32: w.load32,
            w_valu_scalar: w.valu_scalar,
            w_valu_packed: w.valu_packed,
            w_shared: w.shared,
        }
    }
}

/// A single perm mode or a list cycled across shapes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PermModes {
    One(String),
    Cycle(Vec<String>),
}

impl PermModes {
    fn names(&self) -> Vec<&str> {
        match self {
            PermModes::One(s) => vec![s.as_str()],
            PermModes::Cycle(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(with = "seed_repr")]
    pub seed: u64,
    pub shapes: Vec<Shape>,
    pub tile: TileConfig,
    pub variants: Vec<String>,
    pub perm_mode: PermModes,
    pub weights: WeightsConfig,
    /// Flat absolute tolerance on `|C - oracle|`. When absent each element is
    /// held to its running-error bound.
    pub tolerance: Option<f64>,
    /// Not part of the report, so identical runs into different directories
    /// produce identical files.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            shapes: vec![
                [1, 512, 64, 128].into(),
                [4, 512, 64, 128].into(),
                [8, 1024, 128, 128].into(),
                [3, 384, 64, 128].into(),
                [3, 200, 64, 40].into(),
            ],
            tile: TileConfig::default(),
            variants: VariantFlags::all().iter().map(|v| v.name()).collect(),
            perm_mode: PermModes::Cycle(
                ["none", "identity", "seeded-shuffle"]
                    .map(String::from)
                    .to_vec(),
            ),
            weights: WeightsConfig::default(),
            tolerance: None,
            output_dir: PathBuf::from("qgemm-lab-out"),
        }
    }
}

/// TOML integers are signed, so seeds above `i64::MAX` travel as decimal strings.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t.trim().parse().map_err(|_| {
                de::Error::custom(format!("seed `{t}` is not a 64-bit unsigned integer"))
            }),
        }
    }
}

/// A validated [`RunConfig`] in kernel terms.
#[derive(Clone, Debug)]
pub struct Plan {
    pub seed: u64,
    pub shapes: Vec<(Shape, PermMode)>,
    pub tile: TileParams,
    pub variants: Vec<VariantFlags>,
    pub weights: CostWeights,
    pub tolerance: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().trim().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn plan(&self) -> Result<Plan, CliError> {
        if self.shapes.is_empty() {
            return Err(CliError::Config("at least one shape is required".into()));
        }
        for s in &self.shapes {
            s.validate()?;
        }
        if self.variants.is_empty() {
            return Err(CliError::Config("at least one variant is required".into()));
        }
        let mut variants = Vec::with_capacity(self.variants.len());
        for v in &self.variants {
            let flags: VariantFlags = v.parse().map_err(CliError::Config)?;
            if variants.contains(&flags) {
                return Err(CliError::Config(format!("variant `{v}` listed twice")));
            }
            variants.push(flags);
        }
        let modes = self
            .perm_mode
            .names()
            .into_iter()
            .map(|s| s.parse::<PermMode>().map_err(CliError::Config))
            .collect::<Result<Vec<_>, _>>()?;
        if modes.is_empty() {
            return Err(CliError::Config("perm_mode list is empty".into()));
        }
        let tile = TileParams::from(self.tile);
        for &flags in &variants {
            tile.validate(flags)?;
        }
        let weights = CostWeights::from(self.weights);
        weights.validate().map_err(CliError::Config)?;
        if let Some(t) = self.tolerance {
            if !(t.is_finite() && t >= 0.0) {
                return Err(CliError::Config(format!(
                    "tolerance {t} must be finite and >= 0"
                )));
            }
        }
        Ok(Plan {
            seed: self.seed,
            shapes: self
                .shapes
                .iter()
                .enumerate()
                .map(|(i, &s)| (s, modes[i % modes.len()]))
                .collect(),
            tile,
            variants,
            weights,
            tolerance: self.tolerance,
        })
    }
}

impl Plan {
    /// Generator seed for shape `index`.
    pub fn shape_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_cycles_perm_modes() {
        let plan = RunConfig::default().plan().unwrap();
        let modes: Vec<_> = plan.shapes.iter().map(|(_, p)| p.as_str()).collect();
        assert_eq!(
            modes,
            ["none", "identity", "seeded-shuffle", "none", "identity"]
        );
        assert_eq!(plan.variants.len(), 8);
        assert_eq!(plan.variants[0], VariantFlags::BASELINE);
    }

    #[test]
    fn toml_roundtrip_and_overrides() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = "18446744073709551615"
            shapes = [[2, 64, 16, 64]]
            variants = ["baseline", "opt4gptq"]
            perm_mode = "reversed"
            tolerance = 0.5
            [tile]
            bk = 32
            threads = 8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, u64::MAX);
        assert_eq!(
            cfg.tile,
            TileConfig {
                bk: 32,
                m_count: 2,
                threads: 8
            }
        );
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.shapes[0].1, PermMode::Reversed);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again.seed, cfg.seed);
        assert_eq!(again.shapes, cfg.shapes);
    }

    #[test]
    fn invalid_configs() {
        let bad = |s: &str| {
            RunConfig::from_toml(s)
                .and_then(|c| c.plan().map(|_| ()))
                .unwrap_err()
        };
        assert_eq!(bad("shapes = [[1, 12, 8, 4]]").kind(), "shape");
        assert_eq!(bad("shapes = [[1, 64, 8, 24]]").kind(), "shape");
        assert_eq!(bad("variants = []").kind(), "config");
        assert_eq!(bad("variants = [\"fast\"]").kind(), "config");
        assert_eq!(bad("perm_mode = \"sideways\"").kind(), "config");
        assert_eq!(bad("colour = 1").kind(), "config");
        assert_eq!(bad("tolerance = -1.0").kind(), "config");
        assert_eq!(bad("[weights]\natomic = -1.0").kind(), "config");
    }

    #[test]
    fn single_group_shape_is_valid() {
        Shape::from([1, 256, 8, 256]).validate().unwrap();
    }
}
