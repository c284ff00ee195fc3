//! The four verbs. Each reads a resolved configuration and writes files
//! into the output directory.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tense_core::design::{self, DesignStep};
use tense_core::emulator::{estimate_theta_mle, loo_diagnostics, LooRecord, MleOptions, MleResult};
use tense_core::models::{builtin_embedding, SURFACE_NAMES};
use tense_core::nscov::{geodesic_counterexample, geodesic_threshold, min_eigenvalue_check};
use tense_core::{
    AdjustedEmulator, DesignState, Domain, Error, KernelMode, NsCovSpec, Point2, Polyline, PriorSpec, Segment,
    StraddleRequest, TrainingSet, UciSpec,
};

use crate::config::{read_design, DesignConfig, JumpProbe, Resolved, StraddleConfig};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, sig6, write_binary, write_csv, write_json};

/// Variance clamps above this fraction of grid cells raise a warning.
const CLAMP_WARN_FRACTION: f64 = 1e-3;

pub struct Context {
    pub res: Resolved,
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Serialize)]
struct PriorSummary {
    mean: f64,
    sigma: f64,
    theta: f64,
    alpha3: Option<f64>,
    nugget: f64,
}

impl PriorSummary {
    fn new(p: &PriorSpec) -> Self {
        PriorSummary {
            mean: p.mean,
            sigma: p.sigma,
            theta: p.kernel.theta(),
            alpha3: match &p.kernel {
                KernelMode::Tense { alpha3, .. } => Some(*alpha3),
                KernelMode::Stationary2D(_) => None,
            },
            nugget: p.nugget,
        }
    }
}

fn ghost_count(data: &TrainingSet) -> usize {
    (0..data.len()).filter(|&i| data.is_ghost(i)).count()
}

fn point_row(p: Point2) -> Vec<String> {
    vec![sig6(p.x), sig6(p.y)]
}

#[derive(Serialize)]
struct TearCell {
    index: usize,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct GridReport {
    rows: usize,
    nx: usize,
    ny: usize,
    domain: Domain,
    surface: Option<String>,
    prior: PriorSummary,
    nugget_used: f64,
    runs: usize,
    ghosts: usize,
    /// Cells lying on a tear line; their region follows the half-open
    /// convention (the tear belongs to the upper side).
    on_tear: Vec<TearCell>,
    variance_clamps: usize,
    warnings: Vec<String>,
}

pub fn eval_grid(ctx: &Context, binary: bool) -> CliResult<()> {
    let res = &ctx.res;
    let prior = res.prior(&res.runs)?;
    let em = AdjustedEmulator::build(prior.clone(), res.runs.clone())?;
    let (nx, ny) = (res.config.grid.nx, res.config.grid.ny);
    let grid = res.domain.lattice(nx, ny)?;
    let moments = em.predict(&grid)?;
    ensure_dir(&ctx.out)?;

    let header: Vec<String> = ["x", "y", "mean", "sd"].map(String::from).to_vec();
    let rows = grid.iter().zip(&moments).map(|(p, &(m, v))| {
        let mut row = point_row(*p);
        row.extend([sig6(m), sig6(v.sqrt())]);
        row
    });
    write_csv(&ctx.file("grid.csv"), &header, rows)?;
    if binary {
        let flat: Vec<f64> = grid
            .iter()
            .zip(&moments)
            .flat_map(|(p, &(m, v))| [p.x, p.y, m, v.sqrt()])
            .collect();
        write_binary(&ctx.file("grid.bin"), 4, &flat)?;
    }

    let tol = 1e-9 * res.domain.width().max(res.domain.height());
    let on_tear = match &res.surface {
        Some(s) => grid
            .iter()
            .enumerate()
            .filter(|(_, p)| s.on_tear(**p, tol))
            .map(|(index, p)| TearCell { index, x: p.x, y: p.y })
            .collect(),
        None => Vec::new(),
    };
    let clamps = em.clamp_count();
    let mut warnings = Vec::new();
    if clamps as f64 > CLAMP_WARN_FRACTION * grid.len() as f64 {
        warnings.push(format!(
            "{clamps} of {} cells had negative adjusted variance clamped to zero",
            grid.len()
        ));
    }
    if !on_tear.is_empty() {
        warnings.push(format!("{} cells lie on a tear line", on_tear.len()));
    }
    let report = GridReport {
        rows: grid.len(),
        nx,
        ny,
        domain: res.domain,
        surface: res.surface.as_ref().map(|s| s.name().to_string()),
        prior: PriorSummary::new(&prior),
        nugget_used: em.nugget_used(),
        runs: res.runs.len(),
        ghosts: ghost_count(&res.runs),
        on_tear,
        variance_clamps: clamps,
        warnings,
    };
    write_json(&ctx.file("grid_report.json"), &report)
}

#[derive(Serialize)]
struct UciSummary {
    c: f64,
    delta: f64,
    f_plus: f64,
    candidates_in_region: usize,
    eval_points_in_region: usize,
}

#[derive(Serialize)]
struct DesignReport {
    wave: usize,
    budget: usize,
    candidates: usize,
    eval_points: usize,
    conditioning_runs: usize,
    ghosts: usize,
    straddle_pairs: usize,
    /// Mean adjusted variance over the evaluation grid before the first pick.
    initial_mean_variance: f64,
    steps: Vec<DesignStep>,
    uci: Option<UciSummary>,
}

/// The prior used for variance-only design. Picks do not depend on the
/// mean or on sigma, so unset values default to 0 and 1.
fn design_prior(res: &Resolved, runs: &TrainingSet) -> CliResult<PriorSpec> {
    match res.prior(runs) {
        Ok(p) => Ok(p),
        Err(CliError::Config(_)) => {
            let p = &res.config.prior;
            Ok(PriorSpec::new(p.mean.unwrap_or(0.0), p.sigma.unwrap_or(1.0), res.kernel.clone())?
                .with_nugget(p.nugget)?)
        }
        Err(e) => Err(e),
    }
}

fn design_file_name(wave: usize) -> String {
    format!("design_wave{wave}.csv")
}

fn inset_boundary(d: &Domain, inset: f64) -> CliResult<Polyline> {
    if !(inset >= 0.0 && 2.0 * inset < d.width().min(d.height())) {
        return Err(CliError::Config(format!("ghost inset {inset} does not fit inside the domain")));
    }
    let (x0, x1, y0, y1) = (d.x.0 + inset, d.x.1 - inset, d.y.0 + inset, d.y.1 - inset);
    Ok(Polyline::new(
        vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ],
        true,
    ))
}

fn straddle_request(res: &Resolved, sc: &StraddleConfig) -> CliResult<StraddleRequest> {
    let fault = match (sc.fault, sc.tear) {
        (Some(f), None) => f,
        (None, Some(k)) => {
            let tears = res.surface.as_ref().map(|s| s.tear_lines()).unwrap_or_default();
            let line = tears
                .get(k)
                .ok_or_else(|| CliError::Config(format!("surface has no tear line {k}")))?;
            line.segments()
                .into_iter()
                .find(|s: &Segment| s.y_at(sc.x).is_some())
                .ok_or_else(|| CliError::Config(format!("tear line {k} does not span x = {}", sc.x)))?
        }
        _ => return Err(CliError::Config("each straddle needs exactly one of `fault` or `tear`".into())),
    };
    Ok(StraddleRequest { fault, x: sc.x })
}

fn split_runs(runs: &TrainingSet) -> (Vec<Point2>, Vec<Point2>) {
    let (mut real, mut ghosts) = (Vec::new(), Vec::new());
    for (i, &p) in runs.points.iter().enumerate() {
        if runs.is_ghost(i) {
            ghosts.push(p);
        } else {
            real.push(p);
        }
    }
    (real, ghosts)
}

pub fn design(ctx: &Context, wave: usize) -> CliResult<()> {
    let res = &ctx.res;
    let dc = res
        .config
        .design
        .as_ref()
        .ok_or_else(|| CliError::Config("the config has no `design` section".into()))?;
    if wave == 0 {
        return Err(CliError::Config("waves are numbered from 1".into()));
    }
    let candidates = res.domain.cell_centres(dc.candidates, dc.candidates)?;
    let eval = res.domain.cell_centres(dc.eval_grid, dc.eval_grid)?;
    ensure_dir(&ctx.out)?;
    let (rows, report) = if wave == 1 {
        first_wave(res, dc, candidates, eval)?
    } else {
        later_wave(ctx, dc, wave, candidates, eval)?
    };
    let header: Vec<String> = ["index", "x", "y", "source"].map(String::from).to_vec();
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, (p, source))| vec![i.to_string(), p.x.to_string(), p.y.to_string(), source.to_string()]);
    write_csv(&ctx.file(&design_file_name(wave)), &header, rows)?;
    write_json(&ctx.file(&format!("design_wave{wave}.json")), &report)
}

type DesignRows = Vec<(Point2, &'static str)>;

fn first_wave(res: &Resolved, dc: &DesignConfig, candidates: Vec<Point2>, eval: Vec<Point2>) -> CliResult<(DesignRows, DesignReport)> {
    let prior = design_prior(res, &res.runs)?;
    let (mut selected, mut ghosts) = split_runs(&res.runs);
    let new_ghosts = match &dc.ghosts {
        Some(g) => {
            let boundary = match &g.boundary {
                Some(b) => b.clone(),
                None => {
                    let inset = g.inset.unwrap_or(0.01 * res.domain.width().min(res.domain.height()));
                    inset_boundary(&res.domain, inset)?
                }
            };
            design::ghost_points(&boundary, g.count)?
        }
        None => Vec::new(),
    };
    let pairs = if dc.straddles.is_empty() {
        Vec::new()
    } else {
        let surface = res
            .surface
            .as_ref()
            .ok_or_else(|| CliError::Config("straddles need a surface".into()))?;
        let requests = dc
            .straddles
            .iter()
            .map(|s| straddle_request(res, s))
            .collect::<CliResult<Vec<_>>>()?;
        let offset = dc.straddle_offset.unwrap_or(0.01 * res.domain.height());
        design::straddle_pairs(surface, &requests, offset)?
    };
    let straddle_pts: Vec<Point2> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    ghosts.extend(&new_ghosts);
    selected.extend(&straddle_pts);
    let conditioning: Vec<Point2> = ghosts.iter().chain(&selected).copied().collect();
    let initial = design::mean_variance(&prior, &conditioning, &eval)?;
    let mut state = DesignState {
        candidates,
        selected,
        ghosts,
        nn_k: dc.nn_k,
    };
    let steps = design::sequential_design(&prior, &mut state, &eval, dc.budget)?;

    let mut rows: DesignRows = new_ghosts.iter().map(|&p| (p, "ghost")).collect();
    rows.extend(steps.iter().map(|s| (s.point, "greedy")));
    rows.extend(straddle_pts.iter().map(|&p| (p, "straddle")));
    let report = DesignReport {
        wave: 1,
        budget: dc.budget,
        candidates: state.candidates.len(),
        eval_points: eval.len(),
        conditioning_runs: res.runs.len(),
        ghosts: new_ghosts.len(),
        straddle_pairs: pairs.len(),
        initial_mean_variance: initial,
        steps,
        uci: None,
    };
    Ok((rows, report))
}

/// Runs from the configuration plus every earlier wave. Earlier-wave points
/// missing from the configured runs are evaluated with the test function.
fn previous_runs(ctx: &Context, wave: usize) -> CliResult<TrainingSet> {
    let res = &ctx.res;
    let mut points = Vec::new();
    let mut ghost = Vec::new();
    for w in 1..wave {
        let path = ctx.file(&design_file_name(w));
        if !path.exists() {
            return Err(CliError::Config(format!(
                "wave {wave} needs the earlier design file {}",
                path.display()
            )));
        }
        for row in read_design(&path)? {
            let p = row.point();
            if !res.runs.points.contains(&p) && !points.contains(&p) {
                points.push(p);
                ghost.push(row.source == "ghost");
            }
        }
    }
    Ok(res.runs.join(&res.evaluate(points, ghost)?)?)
}

fn later_wave(
    ctx: &Context,
    dc: &DesignConfig,
    wave: usize,
    candidates: Vec<Point2>,
    eval: Vec<Point2>,
) -> CliResult<(DesignRows, DesignReport)> {
    let res = &ctx.res;
    let data = previous_runs(ctx, wave)?;
    let prior = res.prior(&data)?;
    let em = AdjustedEmulator::build(prior.clone(), data.clone())?;
    let observed_max = (0..data.len())
        .filter(|&i| !data.is_ghost(i))
        .map(|i| data.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let u = &res.config.uci;
    let uci = UciSpec::new(u.c, u.delta, u.f_plus.unwrap_or(observed_max))?;
    let keep = |pts: Vec<Point2>| -> CliResult<Vec<Point2>> {
        let mask = design::uci_region(&em, &pts, &uci)?;
        Ok(pts.into_iter().zip(mask).filter(|(_, m)| *m).map(|(p, _)| p).collect())
    };
    let candidates = keep(candidates)?;
    let eval = keep(eval)?;
    if eval.is_empty() {
        return Err(CliError::Config("the UCI region contains no evaluation points".into()));
    }
    let (selected, ghosts) = split_runs(&data);
    let initial = design::mean_variance(&prior, &data.points, &eval)?;
    let mut state = DesignState {
        candidates,
        selected,
        ghosts,
        nn_k: dc.nn_k,
    };
    let steps = design::sequential_design(&prior, &mut state, &eval, dc.budget)?;
    let rows = steps.iter().map(|s| (s.point, "greedy")).collect();
    let report = DesignReport {
        wave,
        budget: dc.budget,
        candidates: state.candidates.len(),
        eval_points: eval.len(),
        conditioning_runs: data.len(),
        ghosts: 0,
        straddle_pairs: 0,
        initial_mean_variance: initial,
        steps,
        uci: Some(UciSummary {
            c: uci.c,
            delta: uci.delta,
            f_plus: uci.f_plus,
            candidates_in_region: state.candidates.len(),
            eval_points_in_region: eval.len(),
        }),
    };
    Ok((rows, report))
}

#[derive(Serialize)]
struct JumpSummary {
    probe: JumpProbe,
    mean_abs_jump: f64,
    max_abs_jump: f64,
    /// Fraction of draws whose jump exceeds the reference jump in magnitude.
    frequency_above_reference: Option<f64>,
}

#[derive(Serialize)]
struct SampleSummary {
    count: usize,
    seed: u64,
    points: usize,
    jumps: Vec<JumpSummary>,
    reference: Option<JumpSummary>,
}

pub fn sample(ctx: &Context, count: usize) -> CliResult<()> {
    let res = &ctx.res;
    let sc = &res.config.sample;
    if count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let prior = res.prior(&res.runs)?;
    let em = AdjustedEmulator::build(prior, res.runs.clone())?;
    let mut points = if sc.at_runs {
        split_runs(&res.runs).0
    } else {
        res.domain.lattice(sc.grid[0], sc.grid[1])?
    };
    let base = points.len();
    let probes: Vec<JumpProbe> = sc.jumps.iter().chain(&sc.jump_reference).copied().collect();
    for pr in &probes {
        if !(pr.eps > 0.0) {
            return Err(CliError::Config(format!("jump probe eps must be positive, got {}", pr.eps)));
        }
        points.extend([Point2::new(pr.x, pr.y), Point2::new(pr.x, pr.y - pr.eps)]);
    }
    if points.is_empty() {
        return Err(CliError::Config("nothing to sample: no runs and no probes".into()));
    }
    let draws = em.sample_realizations(&points, count, ctx.seed)?;
    ensure_dir(&ctx.out)?;

    let mut header: Vec<String> = vec!["x".into(), "y".into()];
    header.extend((1..=count).map(|k| format!("sample_{k}")));
    let rows = points.iter().enumerate().map(|(i, p)| {
        let mut row = point_row(*p);
        row.extend(draws.row(i).iter().map(|&v| sig6(v)));
        row
    });
    write_csv(&ctx.file("samples.csv"), &header, rows)?;

    let jump_of = |k: usize| -> Vec<f64> {
        let (hi, lo) = (base + 2 * k, base + 2 * k + 1);
        (0..count).map(|s| (draws[(hi, s)] - draws[(lo, s)]).abs()).collect()
    };
    let reference = sc.jump_reference.map(|_| jump_of(sc.jumps.len()));
    let summarize = |probe: JumpProbe, jumps: &[f64], against: Option<&Vec<f64>>| JumpSummary {
        probe,
        mean_abs_jump: jumps.iter().sum::<f64>() / count as f64,
        max_abs_jump: jumps.iter().copied().fold(0.0, f64::max),
        frequency_above_reference: against
            .map(|r| jumps.iter().zip(r).filter(|(j, r)| j > r).count() as f64 / count as f64),
    };
    let summary = SampleSummary {
        count,
        seed: ctx.seed,
        points: points.len(),
        jumps: sc
            .jumps
            .iter()
            .enumerate()
            .map(|(k, &p)| summarize(p, &jump_of(k), reference.as_ref()))
            .collect(),
        reference: sc
            .jump_reference
            .zip(reference.as_ref())
            .map(|(p, r)| summarize(p, r, None)),
    };
    write_json(&ctx.file("sample_summary.json"), &summary)
}

#[derive(Serialize)]
#[serde(untagged)]
enum Section<T> {
    Done(T),
    Skipped { skipped: String },
}

/// Input problems skip a section; numerical failures abort the report.
fn section<T>(r: CliResult<T>) -> CliResult<Section<T>> {
    match r {
        Ok(v) => Ok(Section::Done(v)),
        Err(CliError::Core(e)) if e.is_numerical() => Err(CliError::Core(e)),
        Err(e) => Ok(Section::Skipped { skipped: e.to_string() }),
    }
}

#[derive(Serialize)]
struct LooSection {
    records: Vec<LooRecord>,
    max_abs_standardized: f64,
    fraction_within_3: f64,
}

#[derive(Serialize)]
struct PsdSweep {
    surface: String,
    theta: f64,
    alpha3: f64,
    sigma: f64,
    points_per_set: usize,
    min_eigenvalues: Vec<f64>,
    violations: usize,
}

#[derive(Serialize)]
struct GeodesicBlock {
    theta: f64,
    matrix: Vec<Vec<f64>>,
    min_eigenvalue: f64,
    theta_threshold: f64,
    positive_semidefinite: bool,
}

#[derive(Serialize)]
struct Report {
    runs: usize,
    ghosts: usize,
    loo: Section<LooSection>,
    mle: Section<MleResult>,
    psd_sweep: Vec<PsdSweep>,
    geodesic: GeodesicBlock,
}

pub fn report(ctx: &Context) -> CliResult<()> {
    let res = &ctx.res;
    let rc = &res.config.report;
    let runs = &res.runs;
    let loo = section(res.prior(runs).and_then(|p| {
        let records = loo_diagnostics(&p, runs)?;
        let z: Vec<f64> = records.iter().map(|r| r.standardized.abs()).collect();
        Ok(LooSection {
            max_abs_standardized: z.iter().copied().fold(0.0, f64::max),
            fraction_within_3: z.iter().filter(|&&v| v < 3.0).count() as f64 / z.len() as f64,
            records,
        })
    }))?;
    let theta = res.config.prior.theta;
    let bounds = rc.theta_bounds.unwrap_or((theta / 10.0, theta * 10.0));
    let opts = MleOptions {
        include_ghosts: rc.include_ghosts_in_mle,
        ..MleOptions::default()
    };
    let mle = section(
        design_prior(res, runs).and_then(|p| Ok(estimate_theta_mle(&p, runs, bounds, opts)?)),
    )?;
    let psd_sweep = psd_sweep(res, ctx.seed)?;
    let (m, min_eig) = geodesic_counterexample(rc.geodesic_theta)?;
    let geodesic = GeodesicBlock {
        theta: rc.geodesic_theta,
        matrix: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        min_eigenvalue: min_eig,
        theta_threshold: geodesic_threshold(),
        positive_semidefinite: min_eig >= 0.0,
    };
    let report = Report {
        runs: runs.len(),
        ghosts: ghost_count(runs),
        loo,
        mle,
        psd_sweep,
        geodesic,
    };
    ensure_dir(&ctx.out)?;
    write_json(&ctx.file("report.json"), &report)
}

/// Random point sets on each surface. Theta is scaled with the surface
/// domain width so the correlation length is the same fraction of every
/// domain.
fn psd_sweep(res: &Resolved, seed: u64) -> CliResult<Vec<PsdSweep>> {
    let rc = &res.config.report;
    let p = &res.config.prior;
    if rc.psd_points == 0 {
        return Err(CliError::Config("report.psd_points must be at least 1".into()));
    }
    let names: Vec<String> = match &rc.psd_surfaces {
        Some(v) => v.clone(),
        None => SURFACE_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let sigma = p.sigma.unwrap_or(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    names
        .into_iter()
        .map(|name| {
            let surface = builtin_embedding(&name)?;
            let d = surface.domain();
            let theta = p.theta * d.width() / res.domain.width();
            let spec = NsCovSpec::new(sigma, theta, p.alpha3, surface)?;
            let mut min_eigenvalues = Vec::with_capacity(rc.psd_sets);
            let mut violations = 0;
            for _ in 0..rc.psd_sets {
                let pts: Vec<Point2> = (0..rc.psd_points)
                    .map(|_| Point2::new(rng.random_range(d.x.0..=d.x.1), rng.random_range(d.y.0..=d.y.1)))
                    .collect();
                let (min, ok) = min_eigenvalue_check(&spec.cov_matrix(&pts)?)?;
                violations += usize::from(!ok);
                min_eigenvalues.push(min);
            }
            Ok(PsdSweep {
                surface: name,
                theta,
                alpha3: p.alpha3,
                sigma,
                points_per_set: rc.psd_points,
                min_eigenvalues,
                violations,
            })
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(CliError::from)
}

pub fn output_dir(res: &Resolved, flag: Option<&Path>) -> PathBuf {
    match (flag, &res.config.output) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => res.path(p),
        (None, None) => PathBuf::from("out"),
    }
}
