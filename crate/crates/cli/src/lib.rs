//! Configuration, commands and file outputs of the `sweep` binary.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sweep_core::builtin::{self, BUILTIN_NAMES};
use sweep_core::crowd::{self, CrowdScenario};
use sweep_core::{
    convergence, evaluate_all, run_convergence, run_diagnostics, solve, Anchor, AssumptionParams,
    ConvergenceOptions, ConvergenceStudy, DiagnosticsOptions, DiagnosticsReport, DiscreteTrajectory, Slope,
    SweepingProblem,
};

/// Horizon of crowd runs when the config leaves it out.
pub const CROWD_HORIZON: f64 = 4.0;
/// Step size used to pick a default step count for crowd runs.
pub const CROWD_DEFAULT_H: f64 = 0.01;
/// Step grid of the default convergence study.
pub const DEFAULT_H_LIST: [f64; 9] = [0.02, 0.025, 0.04, 0.05, 0.0625, 0.08, 0.1, 0.2, 0.5];
pub const DEFAULT_H_MIN: f64 = 0.01;
/// Number of evenly spaced trajectory nodes used as diagnostic anchors,
/// not counting `t = 0`.
pub const CHECK_ANCHORS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(#[source] sweep_core::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    /// Index of the failing time step, for solver errors raised mid-run.
    pub fn failing_step(&self) -> Option<usize> {
        match self {
            CliError::Solver(sweep_core::Error::Step { index, .. }) => Some(*index),
            _ => None,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdSource {
    pub crowd: CrowdScenario,
}

/// Either `"builtin:<name>"` or `{"crowd": {...}}`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Named(String),
    Crowd(CrowdSource),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Steps {
    One(usize),
    Many(Vec<usize>),
}

impl Steps {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            Steps::One(n) => vec![*n],
            Steps::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub steps: Option<Steps>,
    #[serde(default)]
    pub h_list: Option<Vec<f64>>,
    #[serde(default)]
    pub h_min: Option<f64>,
    #[serde(default)]
    pub params: Option<AssumptionParams>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Error sample times of a convergence study (default 10).
    #[serde(default)]
    pub error_samples: Option<usize>,
    /// Samples per sampled inequality in `check` (default 1000).
    #[serde(default)]
    pub check_samples: Option<usize>,
    /// Steps below this multiple of `h_min` are left out of the fit (default 4).
    #[serde(default)]
    pub exclusion_factor: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if let ScenarioSource::Named(s) = &self.scenario {
            let name = s
                .strip_prefix("builtin:")
                .ok_or_else(|| config_err(format!("scenario must be \"builtin:<name>\" or {{\"crowd\": ...}}, got {s:?}")))?;
            if !BUILTIN_NAMES.contains(&name) {
                return Err(config_err(format!(
                    "unknown builtin {name:?}; expected one of {}",
                    BUILTIN_NAMES.join(", ")
                )));
            }
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(config_err(format!("horizon must be positive, got {h}")));
            }
        }
        if let Some(steps) = &self.steps {
            let v = steps.to_vec();
            if v.is_empty() || v.contains(&0) {
                return Err(config_err("steps must be at least 1"));
            }
        }
        if let Some(list) = &self.h_list {
            if list.is_empty() || list.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                return Err(config_err("h_list must be a nonempty list of positive step sizes"));
            }
        }
        if let Some(h) = self.h_min {
            if !(h.is_finite() && h > 0.0) {
                return Err(config_err(format!("h_min must be positive, got {h}")));
            }
        }
        if self.error_samples == Some(0) || self.check_samples == Some(0) {
            return Err(config_err("sample counts must be at least 1"));
        }
        if let Some(f) = self.exclusion_factor {
            if !(f.is_finite() && f >= 0.0) {
                return Err(config_err(format!("exclusion_factor must be nonnegative, got {f}")));
            }
        }
        if let Some(p) = &self.params {
            p.validate().map_err(config_err)?;
        }
        Ok(())
    }
}

/// A config turned into a problem with its defaults filled in.
pub struct Resolved {
    pub problem: SweepingProblem,
    pub params: AssumptionParams,
    pub steps: Vec<usize>,
    pub seed: u64,
}

/// Builds the problem for `cfg`. `seed_override` replaces the config seed,
/// which in turn replaces the crowd placement seed.
pub fn resolve(cfg: &RunConfig, seed_override: Option<u64>) -> CliResult<Resolved> {
    cfg.validate()?;
    let seed = seed_override.or(cfg.seed);
    let (problem, params, default_steps) = match &cfg.scenario {
        ScenarioSource::Named(s) => {
            let name = s.trim_start_matches("builtin:");
            let defaults = builtin::defaults(name).map_err(config_err)?;
            let problem = builtin::builtin(name, cfg.horizon).map_err(config_err)?;
            (problem, defaults.params, defaults.steps)
        }
        ScenarioSource::Crowd(CrowdSource { crowd: scenario }) => {
            let mut scenario = scenario.clone();
            if let Some(s) = seed {
                scenario.seed = s;
            }
            let horizon = cfg.horizon.unwrap_or(CROWD_HORIZON);
            let problem = crowd::build(&scenario, horizon).map_err(config_err)?;
            let params = crowd::derived_params(&scenario).map_err(config_err)?;
            let steps = convergence::steps_for(horizon, CROWD_DEFAULT_H).map_err(config_err)?;
            (problem, params, steps)
        }
    };
    Ok(Resolved {
        problem,
        params: cfg.params.unwrap_or(params),
        steps: cfg.steps.as_ref().map_or_else(|| vec![default_steps], Steps::to_vec),
        seed: seed.unwrap_or(0),
    })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    writeln!(w).map_err(io_err(path))?;
    finish(w, path)
}

/// Writes `t,q0,...,q{d-1}` with one row per node, reals in round-trip
/// exact scientific notation.
pub fn write_trajectory_csv(traj: &DiscreteTrajectory, w: &mut impl Write) -> io::Result<()> {
    let mut header = String::from("t");
    for i in 0..traj.dim() {
        header.push_str(&format!(",q{i}"));
    }
    writeln!(w, "{header}")?;
    for (t, q) in traj.times().iter().zip(traj.nodes()) {
        write!(w, "{t:.16e}")?;
        for v in q.as_slice() {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionStats {
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
    pub mean_halfspaces: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub h: f64,
    pub horizon: f64,
    pub dim: usize,
    pub constraints: usize,
    /// Smallest constraint value over all nodes.
    pub feasibility_margin: Option<f64>,
    pub max_displacement: f64,
    pub projection: ProjectionStats,
}

pub fn summarize(problem: &SweepingProblem, traj: &DiscreteTrajectory) -> CliResult<RunSummary> {
    let records = traj.records();
    let initial = evaluate_all(problem, 0.0, problem.initial().as_slice()).map_err(CliError::Solver)?;
    let margin = records
        .iter()
        .map(|r| r.feasibility_margin)
        .chain(initial)
        .fold(f64::INFINITY, f64::min);
    let displacement = traj
        .nodes()
        .windows(2)
        .map(|w| sweep_core::linalg::distance(w[0].as_slice(), w[1].as_slice()))
        .fold(0.0, f64::max);
    Ok(RunSummary {
        steps: traj.steps(),
        h: traj.step_size(),
        horizon: traj.horizon(),
        dim: traj.dim(),
        constraints: problem.constraint_count(),
        feasibility_margin: margin.is_finite().then_some(margin),
        max_displacement: displacement,
        projection: ProjectionStats {
            total_iterations: records.iter().map(|r| r.iterations).sum(),
            max_iterations: records.iter().map(|r| r.iterations).max().unwrap_or(0),
            max_residual: records.iter().map(|r| r.residual).fold(0.0, f64::max),
            mean_halfspaces: records.iter().map(|r| r.halfspaces as f64).sum::<f64>() / records.len() as f64,
        },
    })
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Solves for every step count and writes `trajectory_n{n}.csv` and
/// `summary_n{n}.json`. Returns the written paths.
pub fn cmd_solve(cfg: &RunConfig, out: &Path, seed: Option<u64>) -> CliResult<Vec<PathBuf>> {
    let resolved = resolve(cfg, seed)?;
    ensure_dir(out)?;
    let mut written = Vec::new();
    for &n in &resolved.steps {
        log::info!("solving with n = {n}");
        let traj = solve(&resolved.problem, n).map_err(CliError::Solver)?;
        let csv = out.join(format!("trajectory_n{n}.csv"));
        let mut w = create(&csv)?;
        write_trajectory_csv(&traj, &mut w).map_err(io_err(&csv))?;
        finish(w, &csv)?;
        let summary = out.join(format!("summary_n{n}.json"));
        write_json(&summary, &summarize(&resolved.problem, &traj)?)?;
        written.push(csv);
        written.push(summary);
    }
    Ok(written)
}

/// The JSON document written by `convergence`.
pub fn convergence_report(study: &ConvergenceStudy) -> Value {
    let (slope, intercept) = match study.fit {
        Slope::Fitted { slope, intercept } => (json!(slope), json!(intercept)),
        Slope::Exact => (json!("exact"), Value::Null),
        Slope::Unavailable => (Value::Null, Value::Null),
    };
    let points: Vec<Value> = study
        .points
        .iter()
        .map(|p| {
            json!({
                "h": p.h,
                "steps": p.steps,
                "e_h": p.e_h,
                "included_in_fit": p.included(),
            })
        })
        .collect();
    let excluded: Vec<Value> = study
        .points
        .iter()
        .filter_map(|p| p.excluded.map(|reason| json!({ "h": p.h, "reason": reason })))
        .collect();
    json!({
        "slope": slope,
        "intercept": intercept,
        "h_min": study.h_min,
        "reference_steps": study.reference_steps,
        "points": points,
        "excluded": excluded,
    })
}

pub fn write_convergence_csv(study: &ConvergenceStudy, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "h,e_h,included_in_fit")?;
    for p in &study.points {
        writeln!(w, "{:.16e},{:.16e},{}", p.h, p.e_h, p.included())?;
    }
    Ok(())
}

pub fn convergence_options(cfg: &RunConfig) -> CliResult<ConvergenceOptions> {
    let h_list = cfg.h_list.clone().unwrap_or_else(|| DEFAULT_H_LIST.to_vec());
    let h_min = cfg.h_min.unwrap_or(DEFAULT_H_MIN);
    if let Some(h) = h_list.iter().find(|&&h| h < h_min) {
        return Err(config_err(format!("every h must be at least h_min = {h_min}, got {h}")));
    }
    let mut opts = ConvergenceOptions::new(h_list, h_min);
    if let Some(n) = cfg.error_samples {
        opts.error_samples = n;
    }
    if let Some(f) = cfg.exclusion_factor {
        opts.exclusion_factor = f;
    }
    Ok(opts)
}

/// Runs the study and writes `convergence.csv` and `convergence.json`.
pub fn cmd_convergence(cfg: &RunConfig, out: &Path, seed: Option<u64>) -> CliResult<ConvergenceStudy> {
    let resolved = resolve(cfg, seed)?;
    let opts = convergence_options(cfg)?;
    ensure_dir(out)?;
    let study = run_convergence(&resolved.problem, &opts).map_err(CliError::Solver)?;
    let csv = out.join("convergence.csv");
    let mut w = create(&csv)?;
    write_convergence_csv(&study, &mut w).map_err(io_err(&csv))?;
    finish(w, &csv)?;
    write_json(&out.join("convergence.json"), &convergence_report(&study))?;
    Ok(study)
}

/// Nodes closest to `t = i T / count`, `i = 0..=count`.
pub fn trajectory_anchors(traj: &DiscreteTrajectory, count: usize) -> Vec<Anchor> {
    let n = traj.steps();
    let mut ks: Vec<usize> = (0..=count).map(|i| (i * n + count / 2) / count).collect();
    ks.dedup();
    ks.into_iter()
        .map(|k| Anchor {
            t: traj.times()[k],
            q: traj.node(k).clone(),
        })
        .collect()
}

/// Solves with the first configured step count, samples the assumption
/// checks around evenly spaced nodes and writes `diagnostics.json`.
pub fn cmd_check(cfg: &RunConfig, out: &Path, seed: Option<u64>) -> CliResult<DiagnosticsReport> {
    let resolved = resolve(cfg, seed)?;
    ensure_dir(out)?;
    let traj = solve(&resolved.problem, resolved.steps[0]).map_err(CliError::Solver)?;
    let anchors = trajectory_anchors(&traj, CHECK_ANCHORS);
    let opts = DiagnosticsOptions {
        samples: cfg.check_samples.unwrap_or(DiagnosticsOptions::default().samples),
        seed: resolved.seed,
        ..DiagnosticsOptions::default()
    };
    let report = run_diagnostics(&resolved.problem, &resolved.params, &anchors, Some(&traj), &opts)
        .map_err(CliError::Solver)?;
    write_json(&out.join("diagnostics.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_builtin_and_crowd_scenarios() {
        let a = RunConfig::from_json(r#"{"scenario": "builtin:moving-wall-1d", "steps": [10, 20]}"#).unwrap();
        assert_eq!(a.steps.unwrap().to_vec(), vec![10, 20]);
        let b = RunConfig::from_json(
            r#"{"scenario": {"crowd": {"count": 3, "radius": 0.2, "room": {"width": 10, "height": 10},
                "exit_center": [10, 5], "desired_speed": 1}}, "steps": 40, "seed": 4}"#,
        )
        .unwrap();
        let r = resolve(&b, None).unwrap();
        assert_eq!(r.problem.dim(), 6);
        assert_eq!(r.steps, vec![40]);
        assert_eq!(r.seed, 4);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"scenario": "builtin:moving-wall-1d", "colour": 1}"#,
            r#"{"scenario": "builtin:nope"}"#,
            r#"{"scenario": "moving-wall-1d"}"#,
            r#"{"scenario": "builtin:moving-wall-1d", "steps": 0}"#,
            r#"{"scenario": "builtin:moving-wall-1d", "steps": []}"#,
            r#"{"scenario": {"crowd": {"count": 1}}}"#,
            r#"{"scenario": "builtin:moving-wall-1d", "horizon": -1}"#,
            r#"{"horizon": 1}"#,
        ] {
            let err = RunConfig::from_json(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn anchors_hit_tenths_of_the_horizon() {
        let problem = builtin::builtin("moving-wall-1d", None).unwrap();
        let traj = solve(&problem, 100).unwrap();
        let anchors = trajectory_anchors(&traj, 10);
        assert_eq!(anchors.len(), 11);
        for (i, a) in anchors.iter().enumerate() {
            assert!((a.t - i as f64 / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_rows_round_trip() {
        let problem = builtin::builtin("halfplane-sweep-2d", None).unwrap();
        let traj = solve(&problem, 7).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,q0,q1"));
        for (line, q) in lines.zip(traj.nodes()) {
            let parsed: Vec<f64> = line.split(',').skip(1).map(|s| s.parse().unwrap()).collect();
            assert_eq!(parsed, q.as_slice());
        }
    }
}
