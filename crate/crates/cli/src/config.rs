//! JSON run configuration and its resolution into emulator inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tense_core::embedding::PiecewiseQuadratic;
use tense_core::emulator::{DEFAULT_NUGGET, GHOST_LABEL};
use tense_core::models::builtin_embedding;
use tense_core::{
    Domain, EmbeddingSurface, KernelMode, KernelSpec, Point2, Polyline, PriorSpec, Segment, TestFunction, TrainingSet,
};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Named test function used to evaluate runs that have no recorded value.
    #[serde(default)]
    pub function: Option<String>,
    /// Built-in surface name or a custom piecewise-quadratic surface.
    /// Defaults to the embedding of `function`.
    #[serde(default)]
    pub surface: Option<SurfaceConfig>,
    #[serde(default)]
    pub kernel: KernelChoice,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub runs: RunsConfig,
    #[serde(default)]
    pub design: Option<DesignConfig>,
    #[serde(default)]
    pub uci: UciConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SurfaceConfig {
    Named(String),
    Custom(PiecewiseQuadratic),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    #[default]
    Tense,
    Stationary,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Prior mean; defaults to the sample mean of the runs.
    #[serde(default)]
    pub mean: Option<f64>,
    /// Prior SD; defaults to the sample SD of the runs.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_half")]
    pub theta: f64,
    #[serde(default = "default_half")]
    pub alpha3: f64,
    #[serde(default = "default_nugget")]
    pub nugget: f64,
    /// Matern smoothness for the stationary kernel; SE when absent.
    #[serde(default)]
    pub matern_nu: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            mean: None,
            sigma: None,
            theta: 0.5,
            alpha3: 0.5,
            nugget: DEFAULT_NUGGET,
            matern_nu: None,
        }
    }
}

fn default_half() -> f64 {
    0.5
}

fn default_nugget() -> f64 {
    DEFAULT_NUGGET
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_grid_n")]
    pub nx: usize,
    #[serde(default = "default_grid_n")]
    pub ny: usize,
    /// Defaults to the surface or function domain.
    #[serde(default)]
    pub domain: Option<Domain>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nx: 50,
            ny: 50,
            domain: None,
        }
    }
}

fn default_grid_n() -> usize {
    50
}

/// Where the runs come from. Sources are combined in field order.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunsConfig {
    /// Explicit `[x, y]` inputs, evaluated with `function`.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    /// `[nx, ny]` cell-centred grid over the domain, evaluated with `function`.
    #[serde(default)]
    pub cell_grid: Option<[usize; 2]>,
    /// Design CSV (`index,x,y,source`); ghost rows become zero-valued ghosts.
    #[serde(default)]
    pub design_file: Option<PathBuf>,
    /// Observed runs, CSV with header `x,y,value` and an optional `label`.
    #[serde(default)]
    pub data_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// Greedy picks per wave.
    pub budget: usize,
    /// Candidates per axis (cell-centred).
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    /// Evaluation grid points per axis (cell-centred).
    #[serde(default = "default_eval_grid")]
    pub eval_grid: usize,
    #[serde(default)]
    pub nn_k: Option<usize>,
    #[serde(default)]
    pub straddles: Vec<StraddleConfig>,
    /// Distance of straddle points from the fault; defaults to 1% of the
    /// domain height.
    #[serde(default)]
    pub straddle_offset: Option<f64>,
    #[serde(default)]
    pub ghosts: Option<GhostConfig>,
}

fn default_candidates() -> usize {
    40
}

fn default_eval_grid() -> usize {
    60
}

/// A straddle location on an explicit `fault` segment or on the surface's
/// tear line number `tear`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StraddleConfig {
    #[serde(default)]
    pub fault: Option<Segment>,
    #[serde(default)]
    pub tear: Option<usize>,
    pub x: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhostConfig {
    pub count: usize,
    /// Defaults to the domain boundary moved inwards by `inset`.
    #[serde(default)]
    pub boundary: Option<Polyline>,
    /// Defaults to 1% of the smaller domain side.
    #[serde(default)]
    pub inset: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UciConfig {
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub delta: f64,
    /// Defaults to the largest observed non-ghost value.
    #[serde(default)]
    pub f_plus: Option<f64>,
}

impl Default for UciConfig {
    fn default() -> Self {
        UciConfig {
            c: 3.0,
            delta: 0.0,
            f_plus: None,
        }
    }
}

fn default_c() -> f64 {
    3.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// `[nx, ny]` lattice to sample on.
    #[serde(default = "default_sample_grid")]
    pub grid: [usize; 2],
    /// Sample at the non-ghost runs instead of the lattice.
    #[serde(default)]
    pub at_runs: bool,
    /// Cross-tear probes, appended as pairs of rows after the lattice.
    #[serde(default)]
    pub jumps: Vec<JumpProbe>,
    /// Probe whose jump magnitude the others are compared against.
    #[serde(default)]
    pub jump_reference: Option<JumpProbe>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            grid: default_sample_grid(),
            at_runs: false,
            jumps: Vec::new(),
            jump_reference: None,
        }
    }
}

fn default_sample_grid() -> [usize; 2] {
    [20, 20]
}

/// The jump `f(x, y) - f(x, y - eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct JumpProbe {
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Bracket for the likelihood fit; defaults to `[theta / 10, 10 theta]`.
    #[serde(default)]
    pub theta_bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub include_ghosts_in_mle: bool,
    #[serde(default = "default_psd_sets")]
    pub psd_sets: usize,
    #[serde(default = "default_psd_points")]
    pub psd_points: usize,
    /// Surfaces for the PSD sweep; defaults to every built-in surface.
    #[serde(default)]
    pub psd_surfaces: Option<Vec<String>>,
    #[serde(default = "default_geodesic_theta")]
    pub geodesic_theta: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            theta_bounds: None,
            include_ghosts_in_mle: false,
            psd_sets: default_psd_sets(),
            psd_points: default_psd_points(),
            psd_surfaces: None,
            geodesic_theta: default_geodesic_theta(),
        }
    }
}

fn default_psd_sets() -> usize {
    20
}

fn default_psd_points() -> usize {
    30
}

fn default_geodesic_theta() -> f64 {
    1.0
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// A configuration with every name looked up and every run evaluated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub function: Option<TestFunction>,
    /// Surface used for the kernel (tense) and for on-tear flags.
    pub surface: Option<EmbeddingSurface>,
    pub domain: Domain,
    pub kernel: KernelMode,
    pub runs: TrainingSet,
    pub base_dir: PathBuf,
}

impl Resolved {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(RunConfig::load(path)?, base_dir)
    }

    pub fn new(config: RunConfig, base_dir: PathBuf) -> CliResult<Self> {
        let function = config
            .function
            .as_deref()
            .map(TestFunction::from_name)
            .transpose()?;
        let surface = match &config.surface {
            Some(SurfaceConfig::Named(name)) => Some(builtin_embedding(name)?),
            Some(SurfaceConfig::Custom(pq)) => Some(pq.clone().into_surface()?),
            None => function.map(|f| f.embedding()),
        };
        let domain = config
            .grid
            .domain
            .or(surface.as_ref().map(EmbeddingSurface::domain))
            .or(function.map(|f| f.domain()))
            .ok_or_else(|| CliError::Config("no domain: give grid.domain, a surface or a function".into()))?;
        Domain::new(domain.x, domain.y)?;
        if config.grid.nx < 2 || config.grid.ny < 2 {
            return Err(CliError::Config(format!(
                "grid sizes must be at least 2, got {}x{}",
                config.grid.nx, config.grid.ny
            )));
        }
        let p = &config.prior;
        let kernel = match config.kernel {
            KernelChoice::Tense => {
                let s = surface
                    .clone()
                    .ok_or_else(|| CliError::Config("the tense kernel needs a surface or a function".into()))?;
                KernelMode::tense(p.theta, p.alpha3, s)?
            }
            KernelChoice::Stationary => KernelMode::Stationary2D(match p.matern_nu {
                Some(nu) => KernelSpec::matern(nu, p.theta, 2)?,
                None => KernelSpec::squared_exponential(p.theta, 2)?,
            }),
        };
        let mut resolved = Resolved {
            config,
            function,
            surface,
            domain,
            kernel,
            runs: TrainingSet::empty(),
            base_dir,
        };
        resolved.runs = resolved.load_runs()?;
        Ok(resolved)
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Evaluate `function` at `points`; ghosts get zero.
    pub fn evaluate(&self, points: Vec<Point2>, ghost: Vec<bool>) -> CliResult<TrainingSet> {
        let needs_function = ghost.iter().any(|g| !g);
        let f = match self.function {
            Some(f) => Some(f),
            None if needs_function => {
                return Err(CliError::Config("runs without values need a `function` to evaluate them".into()))
            }
            None => None,
        };
        let values = points
            .iter()
            .zip(&ghost)
            .map(|(&p, &g)| if g { Ok(0.0) } else { f.unwrap().eval(p) })
            .collect::<tense_core::Result<Vec<f64>>>()?;
        let labels = ghost
            .iter()
            .map(|&g| g.then(|| GHOST_LABEL.to_string()))
            .collect();
        Ok(TrainingSet::with_labels(points, values, labels)?)
    }

    fn load_runs(&self) -> CliResult<TrainingSet> {
        let r = &self.config.runs;
        let mut pts: Vec<Point2> = r.points.iter().map(|&p| p.into()).collect();
        if let Some([nx, ny]) = r.cell_grid {
            pts.extend(self.domain.cell_centres(nx, ny)?);
        }
        let mut ghost = vec![false; pts.len()];
        if let Some(file) = &r.design_file {
            for row in read_design(&self.path(file))? {
                ghost.push(row.source == "ghost");
                pts.push(row.point());
            }
        }
        let mut runs = self.evaluate(pts, ghost)?;
        if let Some(file) = &r.data_file {
            runs = runs.join(&read_data(&self.path(file))?)?;
        }
        runs.validate()?;
        Ok(runs)
    }

    /// Prior with unset mean and SD filled from the non-ghost runs.
    pub fn prior(&self, runs: &TrainingSet) -> CliResult<PriorSpec> {
        let p = &self.config.prior;
        let observed: Vec<f64> = (0..runs.len())
            .filter(|&i| !runs.is_ghost(i))
            .map(|i| runs.values[i])
            .collect();
        let n = observed.len() as f64;
        let mean = match p.mean {
            Some(m) => m,
            None if observed.is_empty() => {
                return Err(CliError::Config("prior.mean is required when there are no runs".into()))
            }
            None => observed.iter().sum::<f64>() / n,
        };
        let sigma = match p.sigma {
            Some(s) => s,
            None => {
                let m = observed.iter().sum::<f64>() / n;
                let sd = (observed.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                if observed.len() < 2 || !(sd > 1e-12 * m.abs().max(1.0)) {
                    return Err(CliError::Config(
                        "prior.sigma is required unless the runs have a positive sample SD".into(),
                    ));
                }
                sd
            }
        };
        Ok(PriorSpec::new(mean, sigma, self.kernel.clone())?.with_nugget(p.nugget)?)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DesignRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub source: String,
}

impl DesignRow {
    pub fn point(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

pub fn read_design(path: &Path) -> CliResult<Vec<DesignRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<DesignRow>, _>>()
        .map_err(|e| CliError::csv(path, e))?;
    if let Some(bad) = rows.iter().find(|r| !matches!(r.source.as_str(), "greedy" | "straddle" | "ghost" | "run")) {
        return Err(CliError::Config(format!("{}: unknown source `{}`", path.display(), bad.source)));
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct DataRow {
    x: f64,
    y: f64,
    value: f64,
    #[serde(default)]
    label: Option<String>,
}

pub fn read_data(path: &Path) -> CliResult<TrainingSet> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<DataRow>, _>>()
        .map_err(|e| CliError::csv(path, e))?;
    let points = rows.iter().map(|r| Point2::new(r.x, r.y)).collect();
    let values = rows.iter().map(|r| r.value).collect();
    let labels = rows
        .into_iter()
        .map(|r| r.label.filter(|l| !l.is_empty()))
        .collect();
    Ok(TrainingSet::with_labels(points, values, labels)?)
}
