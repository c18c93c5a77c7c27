//! Resolved run configuration: config file first, then command-line overrides.

use std::path::{Path, PathBuf};

use effbound_core::bounds::{Functional, FunctionalKind};
use effbound_core::models::{BuiltModel, GridSpec, ModelSpec};
use effbound_core::spectral_core::UniformGrid;
use effbound_core::{EffError, GridFunction, Result};
use serde::{Deserialize, Serialize};

/// Tail of an indicator functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Generalized distribution function for Lévy models (left tail for
    /// `t < 0`, right tail for `t > 0`), left tail otherwise.
    #[default]
    Auto,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Contents of a `--config` file (JSON or TOML).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub t: Vec<f64>,
    pub side: Option<Side>,
    /// White-noise matrix functionals.
    #[serde(default)]
    pub zeta: Vec<Vec<f64>>,
    /// CSV file with columns `x,zeta`: a sampled functional used instead of
    /// the indicators at `t`.
    pub zeta_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EffError::InvalidInput(format!("{}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        if is_toml {
            toml::from_str(&text)
                .map_err(|e| EffError::InvalidInput(format!("{}: {e}", path.display())))
        } else {
            serde_json::from_str(&text)
                .map_err(|e| EffError::InvalidInput(format!("{}: {e}", path.display())))
        }
    }
}

/// Fully resolved configuration, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub model: ModelSpec,
    pub t: Vec<f64>,
    pub side: Side,
    pub zeta: Vec<Vec<f64>>,
    pub zeta_file: Option<PathBuf>,
    pub seed: u64,
    pub tolerance: Option<f64>,
    pub format: Format,
}

/// Merge named model parameters into a spec. Parameters unknown to the
/// model are rejected by the spec's strict deserialization.
pub fn model_spec(
    base: Option<ModelSpec>,
    name: Option<&str>,
    params: &[(&'static str, Option<f64>)],
    grid: GridSpec,
    default_name: &str,
) -> Result<ModelSpec> {
    let mut value = match (base, name) {
        (Some(b), None) => serde_json::to_value(b).expect("spec serializes"),
        (Some(b), Some(n)) if b.name() == n => serde_json::to_value(b).expect("spec serializes"),
        (_, Some(n)) => serde_json::json!({ "model": n }),
        (None, None) => serde_json::json!({ "model": default_name }),
    };
    let obj = value.as_object_mut().expect("tagged spec is an object");
    for (k, v) in params {
        if let Some(v) = v {
            obj.insert((*k).to_string(), serde_json::json!(v));
        }
    }
    if grid.n.is_some() || grid.span.is_some() {
        let mut g = obj
            .get("grid")
            .cloned()
            .and_then(|g| serde_json::from_value::<GridSpec>(g).ok())
            .unwrap_or_default();
        if grid.n.is_some() {
            g.n = grid.n;
        }
        if grid.span.is_some() {
            g.span = grid.span;
        }
        obj.insert(
            "grid".into(),
            serde_json::to_value(g).expect("grid serializes"),
        );
    }
    let spec: ModelSpec = serde_json::from_value(value.clone())
        .map_err(|e| EffError::InvalidInput(format!("model parameters: {e}")))?;
    // record the grid actually used
    let obj = value.as_object_mut().expect("tagged spec is an object");
    if !matches!(spec, ModelSpec::WnMatrix { .. }) {
        let g = spec.grid()?;
        let resolved = GridSpec {
            n: Some(g.n),
            span: Some(-g.x0),
        };
        obj.insert(
            "grid".into(),
            serde_json::to_value(resolved).expect("grid serializes"),
        );
        return serde_json::from_value(value)
            .map_err(|e| EffError::InvalidInput(format!("model parameters: {e}")));
    }
    Ok(spec)
}

impl RunConfig {
    /// Indicator functional for Lévy and deconvolution models.
    pub fn functional(&self, levy: bool) -> Result<Functional> {
        if let Some(path) = &self.zeta_file {
            let zeta = read_sampled(path, self.model.grid()?)?;
            return Functional::new(vec![FunctionalKind::Grid {
                zeta,
                smoothness: None,
            }]);
        }
        if self.t.is_empty() {
            return Err(EffError::InvalidInput(
                "at least one --t is required".into(),
            ));
        }
        let comps = self
            .t
            .iter()
            .map(|&t| match (self.side, levy) {
                (Side::Auto, true) => FunctionalKind::generalized_cdf(t),
                (Side::Auto, false) | (Side::Left, _) => Ok(FunctionalKind::IndicatorLeft { t }),
                (Side::Right, _) => Ok(FunctionalKind::IndicatorRight { t }),
            })
            .collect::<Result<_>>()?;
        Functional::new(comps)
    }

    pub fn build(&self) -> Result<BuiltModel> {
        self.model.build()
    }
}

/// Read `x,zeta` rows and interpolate them linearly onto `grid`, with zero
/// outside the sampled range. Rows must be sorted by `x`.
fn read_sampled(path: &Path, grid: UniformGrid) -> Result<GridFunction> {
    let err = |e: csv::Error| EffError::Io(format!("{}: {e}", path.display()));
    let mut rd = csv::Reader::from_path(path).map_err(err)?;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for row in rd.deserialize::<(f64, f64)>() {
        let (x, v) = row.map_err(err)?;
        if !x.is_finite() || !v.is_finite() {
            return Err(EffError::InvalidInput(format!(
                "{}: non-finite row ({x}, {v})",
                path.display()
            )));
        }
        if pts.last().is_some_and(|p| p.0 >= x) {
            return Err(EffError::InvalidInput(format!(
                "{}: x must be strictly increasing",
                path.display()
            )));
        }
        pts.push((x, v));
    }
    if pts.len() < 2 {
        return Err(EffError::InvalidInput(format!(
            "{}: need at least two rows",
            path.display()
        )));
    }
    Ok(GridFunction::from_fn(grid, |x| {
        let k = pts.partition_point(|p| p.0 <= x);
        match k {
            0 => 0.0,
            k if k == pts.len() => {
                if x == pts[k - 1].0 {
                    pts[k - 1].1
                } else {
                    0.0
                }
            }
            k => {
                let (a, b) = (pts[k - 1], pts[k]);
                a.1 + (x - a.0) / (b.0 - a.0) * (b.1 - a.1)
            }
        }
    }))
}
