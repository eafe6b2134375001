//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diffsim::pipeline::{Epsilon, PipelineSettings};
use diffsim::preimage::{default_stretches, Anchor, PreimageConfig, SigmaGrid};
use diffsim::trackdata::{TrackFormat, TrackMetric};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub input: InputSection,
    pub model: ModelSection,
    pub cv: CvSection,
    pub density: DensitySection,
    pub preimage: PreimageSection,
    pub simulate: SimulateSection,
    pub validate: ValidateSection,
    pub dim: DimSection,
    pub cde: CdeSection,
    pub synth: SynthSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub path: PathBuf,
    pub format: TrackFormat,
    pub points: usize,
}

impl Default for InputSection {
    fn default() -> Self {
        InputSection {
            path: PathBuf::from("out/tracks.csv"),
            format: TrackFormat::Csv,
            points: 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub epsilon: Option<f64>,
    pub epsilon_quantile: Option<f64>,
    pub t: u32,
    pub m: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            epsilon: None,
            epsilon_quantile: None,
            t: 1,
            m: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub epsilons: Vec<f64>,
    pub steps: Vec<u32>,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            epsilons: Vec::new(),
            steps: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    pub k: Option<usize>,
    pub grid_resolution: usize,
    pub grid_width: f64,
}

impl Default for DensitySection {
    fn default() -> Self {
        DensitySection {
            k: None,
            grid_resolution: 40,
            grid_width: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreimageSection {
    pub sigmas: Vec<f64>,
    pub stretches: Vec<f64>,
    pub anchors: Vec<Anchor>,
}

impl Default for PreimageSection {
    fn default() -> Self {
        PreimageSection {
            sigmas: Vec::new(),
            stretches: default_stretches(),
            anchors: vec![Anchor::Origination, Anchor::Lysis],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub k: usize,
    pub alpha: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { k: 1000, alpha: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimSection {
    pub candidates: Vec<usize>,
    pub sims: usize,
}

impl Default for DimSection {
    fn default() -> Self {
        DimSection {
            candidates: vec![2, 3, 4],
            sims: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdeSection {
    pub years: PathBuf,
    pub condition: PathBuf,
    pub count: usize,
    pub region: Vec<[f64; 2]>,
    pub sst: Option<PathBuf>,
}

impl Default for CdeSection {
    fn default() -> Self {
        CdeSection {
            years: PathBuf::from("out/years.csv"),
            condition: PathBuf::from("out/condition.csv"),
            count: diffsim::cde::DEFAULT_SPLIT,
            region: vec![[2.4, 3.0], [-0.9, -0.4]],
            sst: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n: usize,
    pub condition_shift: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n: 608,
            condition_shift: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        let c: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<(), String> {
        if self.model.epsilon.is_some() && self.model.epsilon_quantile.is_some() {
            return Err("set at most one of model.epsilon and model.epsilon_quantile".into());
        }
        if let Some(q) = self.model.epsilon_quantile {
            if !(q > 0.0 && q < 1.0) {
                return Err(format!("model.epsilon_quantile must lie in (0, 1), got {q}"));
            }
        }
        if self.input.points < 2 {
            return Err("input.points must be at least 2".into());
        }
        if self.density.grid_resolution < 2 {
            return Err("density.grid_resolution must be at least 2".into());
        }
        if !(self.validate.alpha > 0.0 && self.validate.alpha < 1.0) {
            return Err("validate.alpha must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Resolves relative paths against the directory holding the config file.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input.path);
        fix(&mut self.cde.years);
        fix(&mut self.cde.condition);
        if let Some(s) = self.cde.sst.as_mut() {
            fix(s);
        }
        fix(&mut self.output.dir);
    }

    pub fn epsilon(&self) -> Epsilon {
        match (self.model.epsilon, self.model.epsilon_quantile) {
            (Some(e), _) => Epsilon::Fixed(e),
            (None, Some(q)) => Epsilon::Quantile(q),
            (None, None) => Epsilon::Quantile(0.1),
        }
    }

    pub fn preimage(&self) -> PreimageConfig {
        PreimageConfig {
            sigmas: if self.preimage.sigmas.is_empty() {
                SigmaGrid::Auto
            } else {
                SigmaGrid::Fixed(self.preimage.sigmas.clone())
            },
            stretches: self.preimage.stretches.clone(),
            anchors: self.preimage.anchors.clone(),
        }
    }

    pub fn pipeline(&self) -> PipelineSettings {
        PipelineSettings {
            epsilon: self.epsilon(),
            t: self.model.t,
            m: self.model.m,
            k: self.density.k,
            preimage: self.preimage(),
            metric: TrackMetric::default(),
        }
    }
}

/// Commented template written by `init`; parses to `Config::default()`.
pub const TEMPLATE: &str = r#"# diffsim run configuration. Relative paths resolve against this file's directory.

# Master seed for every random step.
seed = 0

[input]
# Track file; `csv` is id,seq,lon,lat with one row per fix, `hurdat` is the HURDAT-like layout.
path = "out/tracks.csv"
format = "csv"
# Points per regularized track.
points = 13

[model]
# Kernel scale: give `epsilon` directly, or `epsilon_quantile` of pairwise squared distances.
# With neither set, the 0.1 quantile is used.
# epsilon = 430.0
# epsilon_quantile = 0.1
# Diffusion steps and embedding dimension.
t = 1
m = 3

[cv]
# Candidate kernel scales; empty means seven log-spaced values over the 10th to 90th percentile.
epsilons = []
steps = [1, 2, 3]

[density]
# Neighbour count for bandwidths; unset means round(sqrt(n)).
# k = 25
# Density grid written by `fit`: points per axis and half-width in bandwidths.
grid_resolution = 40
grid_width = 3.0

[preimage]
# Softmax scales; empty means the automatic grid (sigma -> 0 limit plus nine data-scaled values).
sigmas = []
stretches = [0.75, 0.8, 0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15, 1.2, 1.25, 1.3, 1.35, 1.4, 1.45, 1.5]
anchors = ["origination", "lysis"]

[simulate]
# Number of tracks; unset means as many as the input.
# count = 608

[validate]
# Simulated null replicates and rejection level.
k = 1000
alpha = 0.05

[dim]
candidates = [2, 3, 4]
sims = 100

[cde]
# Track years (id,year) and the per-year condition series (year,value).
years = "out/years.csv"
condition = "out/condition.csv"
# Years on each side of the split.
count = 19
# Discrepancy region, one [lo, hi] pair per leading diffusion coordinate.
region = [[2.4, 3.0], [-0.9, -0.4]]
# Optional gridded field (time,lon,lat,value) to average over every track.
# sst = "sst.csv"

[synth]
# Size of the synthetic set written by `synth` and the strength of its condition coupling.
n = 608
condition_shift = 0.0

[output]
dir = "out"
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_to_defaults() {
        assert_eq!(Config::parse(TEMPLATE).unwrap(), Config::default());
    }

    #[test]
    fn conflicting_epsilon_is_rejected() {
        assert!(Config::parse("[model]\nepsilon = 1.0\nepsilon_quantile = 0.2\n").is_err());
        assert!(Config::parse("[model]\nepsilon_quantile = 1.5\n").is_err());
        assert!(Config::parse("[model]\nunknown = 1\n").is_err());
    }

    #[test]
    fn rebase_only_touches_relative_paths() {
        let mut c = Config::parse("[input]\npath = \"/abs/t.csv\"\n").unwrap();
        c.rebase(Path::new("/base"));
        assert_eq!(c.input.path, PathBuf::from("/abs/t.csv"));
        assert_eq!(c.output.dir, PathBuf::from("/base/out"));
    }
}
