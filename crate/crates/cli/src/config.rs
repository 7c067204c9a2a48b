//! Run configuration: one TOML (or JSON) file per experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nkit_core::estimates::FitWindow;
use nkit_core::neumann::DEFAULT_EPS_CELLS;
use nkit_core::photoacoustic::{AnomalySpec, MediumSpec};
use nkit_core::potentials::{ShapeKind, DEFAULT_LEVEL};
use nkit_core::CoefficientSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    DecayStudy,
    DifferenceStudy,
    GradientStudy,
    LevelsetStudy,
    ReciprocityCheck,
    RepresentationCheck,
    PotentialsCheck,
    PatForward,
    PatMainasym,
    PatConvergence,
    PatSeries,
    PatInvertDemo,
}

impl Preset {
    pub const ALL: [Preset; 12] = [
        Preset::DecayStudy,
        Preset::DifferenceStudy,
        Preset::GradientStudy,
        Preset::LevelsetStudy,
        Preset::ReciprocityCheck,
        Preset::RepresentationCheck,
        Preset::PotentialsCheck,
        Preset::PatForward,
        Preset::PatMainasym,
        Preset::PatConvergence,
        Preset::PatSeries,
        Preset::PatInvertDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::DecayStudy => "decay-study",
            Preset::DifferenceStudy => "difference-study",
            Preset::GradientStudy => "gradient-study",
            Preset::LevelsetStudy => "levelset-study",
            Preset::ReciprocityCheck => "reciprocity-check",
            Preset::RepresentationCheck => "representation-check",
            Preset::PotentialsCheck => "potentials-check",
            Preset::PatForward => "pat-forward",
            Preset::PatMainasym => "pat-mainasym",
            Preset::PatConvergence => "pat-convergence",
            Preset::PatSeries => "pat-series",
            Preset::PatInvertDemo => "pat-invert-demo",
        }
    }

    fn needs_column(self) -> bool {
        matches!(
            self,
            Preset::DecayStudy
                | Preset::DifferenceStudy
                | Preset::GradientStudy
                | Preset::LevelsetStudy
                | Preset::RepresentationCheck
        )
    }

    fn needs_anomaly(self) -> bool {
        matches!(
            self,
            Preset::PatForward
                | Preset::PatMainasym
                | Preset::PatConvergence
                | Preset::PatSeries
                | Preset::PatInvertDemo
        )
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "unit_extent")]
    pub extent: [f64; 3],
}

fn unit_extent() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReciprocityCase {
    pub coefficient: CoefficientSpec,
    pub k: f64,
}

/// Experiment-specific knobs; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyParams {
    /// Column source; the box centre when absent.
    pub source: Option<[f64; 3]>,
    /// Mollifier radius in grid spacings.
    pub eps_cells: f64,
    pub window: FitWindow,
    /// Hölder exponent used by the difference and gradient fits; defaults to
    /// the coefficient's declared exponent.
    pub lambda: Option<f64>,
    pub gradient_order: u8,
    pub n_thresholds: usize,
    pub cases: Vec<ReciprocityCase>,
    pub x: Option<[f64; 3]>,
    pub y: Option<[f64; 3]>,
    pub probes: Vec<[f64; 3]>,
    pub probe_radius: f64,
    /// Coarser grid for the refinement half of the identity check.
    pub coarse_n: Option<usize>,
    pub eps_list: Vec<f64>,
    /// Freeze `mu_s` at its value at `z` inside the singular operator.
    pub frozen: bool,
    pub level: usize,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            source: None,
            eps_cells: DEFAULT_EPS_CELLS,
            window: FitWindow::default(),
            lambda: None,
            gradient_order: 1,
            n_thresholds: 12,
            cases: Vec::new(),
            x: None,
            y: None,
            probes: Vec::new(),
            probe_radius: 0.2,
            coarse_n: None,
            eps_list: vec![0.12, 0.09, 0.06],
            frozen: false,
            level: DEFAULT_LEVEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Preset,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Recorded in the manifest; every preset is deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub grid: GridConfig,
    #[serde(default)]
    pub coefficient: Option<CoefficientSpec>,
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub medium: Option<MediumSpec>,
    #[serde(default)]
    pub anomaly: Option<AnomalySpec>,
    #[serde(default)]
    pub shape: Option<ShapeKind>,
    #[serde(default)]
    pub study: StudyParams,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_tol() -> f64 {
    1e-10
}

impl RunConfig {
    /// Parses by extension: `.json` as JSON, anything else as TOML.
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Structural checks that need no grid.
    fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        let p = self.experiment;
        if p.needs_column() && (self.coefficient.is_none() || self.k.is_none()) {
            return bad(&format!("{p} needs `coefficient` and `k`"));
        }
        if matches!(p, Preset::DifferenceStudy | Preset::GradientStudy)
            && self.study.lambda.is_none()
            && self.coefficient.is_none()
        {
            return bad(&format!("{p} needs a Hölder exponent"));
        }
        if p.needs_anomaly() && (self.medium.is_none() || self.anomaly.is_none()) {
            return bad(&format!("{p} needs `medium` and `anomaly`"));
        }
        if p == Preset::ReciprocityCheck && self.study.cases.is_empty() {
            return bad("reciprocity-check needs at least one entry in `study.cases`");
        }
        if !(self.study.eps_cells >= nkit_core::neumann::MIN_EPS_CELLS) {
            return bad("study.eps_cells must be at least 2");
        }
        if !(self.study.gradient_order == 1 || self.study.gradient_order == 2) {
            return bad("study.gradient_order must be 1 or 2");
        }
        Ok(())
    }

    pub fn effective_threads(&self) -> Result<Option<usize>, CliError> {
        match std::env::var("NKIT_THREADS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(t) if t > 0 => Ok(Some(t)),
                _ => Err(CliError::Config(format!("NKIT_THREADS={v:?} is not a positive integer"))),
            },
            Err(_) => Ok(self.threads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "decay-study"
k = 1.0
[grid]
n = 17
[coefficient]
kind = "constant"
gamma0 = 1.0
"#;

    #[test]
    fn presets_round_trip_by_name() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn toml_and_json_agree() {
        let a = RunConfig::parse(MINIMAL, Path::new("c.toml")).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let b = RunConfig::parse(&json, Path::new("c.json")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tol, 1e-10);
        assert_eq!(a.study.eps_cells, 3.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[study]\nbogus = 1\n");
        assert!(matches!(RunConfig::parse(&text, Path::new("c.toml")), Err(CliError::Config(_))));
        let text = MINIMAL.replace("n = 17", "n = 17\nspacing = 2");
        assert!(RunConfig::parse(&text, Path::new("c.toml")).is_err());
    }

    #[test]
    fn missing_sections_are_rejected() {
        let text = MINIMAL.replace("k = 1.0\n", "");
        assert!(RunConfig::parse(&text, Path::new("c.toml")).is_err());
        let text = MINIMAL.replace("decay-study", "pat-forward");
        assert!(RunConfig::parse(&text, Path::new("c.toml")).is_err());
    }
}
