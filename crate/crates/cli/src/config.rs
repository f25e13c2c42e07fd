use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use jaclab::blowup::{SharpnessConfig, DEFAULT_RADII};
use jaclab::minimality::{BoundaryMode, DEFAULT_GRID, DEFAULT_JACOBIAN_GATE};
use jaclab::perturbation::{ParamTemplate, PerturbationParams};
use jaclab::quadrature::QuadratureConfig;
use jaclab::radial::{DensityRecord, RadialDensity, RadialFunction};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Flags shared by every command; each overrides the matching config field.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Seed of randomized fixtures.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated sweep radii.
    #[arg(long = "R-list", value_delimiter = ',', num_args = 1..)]
    pub r_list: Option<Vec<f64>>,
    /// Inner radius for single-radius commands.
    #[arg(long = "R")]
    pub radius: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub n: Option<usize>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub alpha: Option<f64>,
    #[serde(rename = "R")]
    pub radius: Option<f64>,
    #[serde(rename = "R_list")]
    pub r_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySpec {
    Inline(DensityRecord),
    File {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
}

/// The JSON run configuration. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    #[serde(default)]
    pub params: ParamsSection,
    pub density: Option<DensitySpec>,
    #[serde(default)]
    pub output: OutputSpec,
    pub quadrature: Option<QuadratureConfig>,
    pub seed: Option<u64>,
    /// Sobolev exponents reported by `solve-radial`.
    pub exponents: Option<Vec<f64>>,
    /// Rows of tabulated output.
    pub samples: Option<usize>,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    /// Lower bound `c` of the random estimate family.
    pub lower_bound: Option<f64>,
    pub count: Option<usize>,
    pub pieces: Option<usize>,
    pub sharpness: Option<SharpnessConfig>,
    /// Polar grid (directions, radii).
    pub grid: Option<(usize, usize)>,
    pub twists: Option<usize>,
    pub gate: Option<f64>,
    pub boundary: Option<BoundaryMode>,
    /// Annulus map JSON file checked by `minimality`.
    pub map: Option<PathBuf>,
}

impl RunConfig {
    /// Reads the config file (if any) and applies flag overrides.
    pub fn load(command: &str, args: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                let cfg: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                cfg.relative_to(path.parent().unwrap_or(Path::new(".")))
            }
            None => RunConfig::default(),
        };
        if let Some(c) = &cfg.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "config is for command `{c}`, invoked as `{command}`"
                )));
            }
        }
        let p = &mut cfg.params;
        p.n = args.n.or(p.n);
        p.p = args.p.or(p.p);
        p.q = args.q.or(p.q);
        p.alpha = args.alpha.or(p.alpha);
        p.radius = args.radius.or(p.radius);
        if let Some(list) = &args.r_list {
            p.r_list = Some(list.clone());
        }
        cfg.seed = args.seed.or(cfg.seed);
        cfg.output.path = args.out.clone().or(cfg.output.path.take());
        cfg.output.format = args.format.or(cfg.output.format);
        Ok(cfg)
    }

    fn relative_to(mut self, dir: &Path) -> Self {
        if let Some(DensitySpec::File { file }) = &mut self.density {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        if let Some(map) = &mut self.map {
            if map.is_relative() {
                *map = dir.join(&*map);
            }
        }
        self
    }

    pub fn template(&self) -> Result<ParamTemplate, CliError> {
        let d = ParamTemplate::default();
        let t = ParamTemplate {
            n: self.params.n.unwrap_or(d.n),
            p: self.params.p.unwrap_or(d.p),
            q: self.params.q.unwrap_or(d.q),
            alpha: self.params.alpha.unwrap_or(d.alpha),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.params.n.unwrap_or(ParamTemplate::default().n)
    }

    pub fn params(&self) -> Result<PerturbationParams, CliError> {
        Ok(self.template()?.with_radius(self.params.radius.unwrap_or(0.9))?)
    }

    pub fn radii(&self) -> Vec<f64> {
        self.params.r_list.clone().unwrap_or_else(|| DEFAULT_RADII.to_vec())
    }

    pub fn quadrature(&self) -> Result<QuadratureConfig, CliError> {
        let q = self.quadrature.unwrap_or_default();
        q.validate()?;
        Ok(q)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn format(&self) -> Format {
        self.output.format.unwrap_or_default()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid.unwrap_or(DEFAULT_GRID)
    }

    pub fn gate(&self) -> f64 {
        self.gate.unwrap_or(DEFAULT_JACOBIAN_GATE)
    }

    /// The configured density, or `f ≡ 1` in the configured dimension.
    pub fn density(&self) -> Result<RadialDensity, CliError> {
        let record = match &self.density {
            None => return Ok(RadialDensity::constant(self.dim(), 1.0)?),
            Some(DensitySpec::Inline(r)) => r.clone(),
            Some(DensitySpec::File { file }) => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", file.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?
            }
        };
        let f = RadialDensity::from_record(&record)?;
        if self.params.n.is_some_and(|n| n != f.dim()) {
            return Err(CliError::Config(format!(
                "density dimension {} differs from n = {}",
                f.dim(),
                self.dim()
            )));
        }
        Ok(f)
    }
}
