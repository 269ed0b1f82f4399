//! Executes scenarios and writes their artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nonholonomic::affine::{simulate_affine, AffineFormulation};
use nonholonomic::dalembert::{DalembertSystem, PenaltyRealization};
use nonholonomic::integrate::{simulate, Dynamics, SimulationResult, Status, Unconstrained};
use nonholonomic::vakonomic::{AugmentedState, VakonomicSystem};
use nonholonomic::Matrix;
use serde::Serialize;

use crate::scenario::{AffineSpec, Formulation, ParticleSpec, Scenario, SystemSpec};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{label}: {source}")]
    Engine {
        label: String,
        #[source]
        source: nonholonomic::Error,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One integrated trajectory.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub label: String,
    pub result: SimulationResult,
    /// Green tensor per sample (affine scenarios).
    pub green: Option<Vec<Matrix>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalState {
    pub label: String,
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunInfo {
    pub label: String,
    pub status: String,
    pub message: Option<String>,
    pub samples: usize,
    pub csv: String,
    pub energy_drift: f64,
    pub max_residual: f64,
    pub max_reaction_power: f64,
    pub terminal: Option<TerminalState>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub formulations: [String; 2],
    /// `q_euclidean` for point systems, `green_max_abs` for affine bodies.
    pub metric: String,
    pub threshold: f64,
    pub identical_grids: bool,
    pub sup_gap: f64,
    pub terminal_gap: f64,
    pub non_equivalent: bool,
    pub terminal_states: Vec<TerminalState>,
    pub energy_drift: BTreeMap<String, f64>,
    pub reaction_power: BTreeMap<String, f64>,
    pub constraint_drift: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gap_series: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyReport {
    pub reference: String,
    pub kappas: Vec<f64>,
    pub sup_gaps: Vec<f64>,
    pub strictly_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub description: String,
    pub formulation: String,
    pub dt: f64,
    pub t_end: f64,
    pub status: String,
    pub runs: Vec<RunInfo>,
    pub comparison: Option<ComparisonReport>,
    pub penalty: Option<PenaltyReport>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: RunSummary,
    pub runs: Vec<RunRecord>,
    pub comparison: Option<ComparisonReport>,
    pub penalty: Option<PenaltyReport>,
    pub status: Status,
    pub files: Vec<PathBuf>,
}

enum Job<'a> {
    Particle { label: String, sys: Box<dyn Dynamics + 'a>, init: AugmentedState },
    Affine { label: String, affine: &'a AffineSpec, formulation: AffineFormulation },
}

fn engine(label: &str) -> impl Fn(nonholonomic::Error) -> RunError + '_ {
    move |source| RunError::Engine { label: label.to_string(), source }
}

fn kappa_label(k: f64) -> String {
    let s = format!("{k:e}");
    format!("penalty_k{}", s.replace('.', "p"))
}

fn particle_jobs(s: &Scenario, p: &ParticleSpec) -> Result<Vec<Job<'static>>, RunError> {
    let (q, v, t) = (p.q0.as_slice(), p.v0.as_slice(), p.t0);
    let plain = AugmentedState::from_slices(q, v, t);
    let Some(cs) = &p.constraints else {
        let sys: Box<dyn Dynamics> = Box::new(Unconstrained(p.model.clone()));
        return Ok(vec![Job::Particle { label: "unconstrained".into(), sys, init: plain }]);
    };
    let dalembert = |label: &str| -> Result<Job<'static>, RunError> {
        let sys = DalembertSystem::new(p.model.clone(), cs.clone()).map_err(engine(label))?.with_stabilization(p.stabilization);
        Ok(Job::Particle { label: label.into(), sys: Box::new(sys), init: plain.clone() })
    };
    let vakonomic = |label: &str| -> Result<Job<'static>, RunError> {
        let sys = VakonomicSystem::new(p.model.clone(), cs.clone())
            .and_then(|s| s.with_initial_multipliers(p.lambda0.clone()))
            .and_then(|s| s.with_initial_multiplier_rates(p.lambda_dot0.clone()))
            .map_err(engine(label))?
            .with_stabilization(p.stabilization);
        let init = sys.initial_state(q, v, t);
        Ok(Job::Particle { label: label.into(), sys: Box::new(sys), init })
    };
    Ok(match s.formulation {
        Formulation::Dalembert => vec![dalembert("dalembert")?],
        Formulation::Vakonomic => vec![vakonomic("vakonomic")?],
        Formulation::Both => vec![dalembert("dalembert")?, vakonomic("vakonomic")?],
        Formulation::PenaltySweep => {
            let mut jobs = vec![dalembert("dalembert")?];
            for &k in &s.kappas {
                let label = kappa_label(k);
                let sys = PenaltyRealization::isotropic(p.model.clone(), cs.clone(), k).map_err(engine(&label))?;
                jobs.push(Job::Particle { label, sys: Box::new(sys), init: plain.clone() });
            }
            jobs
        }
    })
}

fn affine_jobs<'a>(s: &Scenario, a: &'a AffineSpec) -> Vec<Job<'a>> {
    let vak = Job::Affine { label: "vakonomic".into(), affine: a, formulation: AffineFormulation::Vakonomic };
    let dal = Job::Affine { label: "dalembert".into(), affine: a, formulation: AffineFormulation::Dalembert };
    match s.formulation {
        Formulation::Dalembert => vec![dal],
        Formulation::Vakonomic => vec![vak],
        _ => vec![dal, vak],
    }
}

fn execute_job(job: &Job<'_>, s: &Scenario) -> Result<RunRecord, RunError> {
    match job {
        Job::Particle { label, sys, init } => {
            let result = simulate(sys.as_ref(), init, &s.integrator).map_err(engine(label))?;
            Ok(RunRecord { label: label.clone(), result, green: None })
        }
        Job::Affine { label, affine, formulation } => {
            let run = simulate_affine(&affine.body, &affine.potential, *formulation, &affine.init, &s.integrator)
                .map_err(engine(label))?;
            Ok(RunRecord { label: label.clone(), result: run.result, green: Some(run.green) })
        }
    }
}

/// Integrate every run the scenario asks for, concurrently.
pub fn execute(s: &Scenario) -> Result<Vec<RunRecord>, RunError> {
    let jobs = match &s.system {
        SystemSpec::Particle(p) => particle_jobs(s, p)?,
        SystemSpec::Affine(a) => affine_jobs(s, a),
    };
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs.iter().map(|job| scope.spawn(move || execute_job(job, s))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    })
}

fn terminal(r: &RunRecord) -> Option<TerminalState> {
    r.result.last().map(|x| TerminalState {
        label: r.label.clone(),
        t: x.t,
        q: x.q.iter().copied().collect(),
        v: x.v.iter().copied().collect(),
        lambda: x.lambda.iter().copied().collect(),
    })
}

fn max_reaction_power(r: &SimulationResult) -> f64 {
    r.samples.iter().map(|x| x.reaction_power.abs()).fold(0.0, f64::max)
}

fn info(r: &RunRecord, csv: String) -> RunInfo {
    RunInfo {
        label: r.label.clone(),
        status: r.result.status.name().to_string(),
        message: r.result.message.clone(),
        samples: r.result.samples.len(),
        csv,
        energy_drift: r.result.energy_drift,
        max_residual: r.result.max_drift,
        max_reaction_power: max_reaction_power(&r.result),
        terminal: terminal(r),
    }
}

/// Pointwise gap between two runs over their common time grid.
pub fn gap_series(a: &RunRecord, b: &RunRecord) -> (Vec<[f64; 2]>, bool) {
    let (sa, sb) = (&a.result.samples, &b.result.samples);
    let same_len = sa.len() == sb.len();
    let mut identical = same_len;
    let mut out = Vec::with_capacity(sa.len().min(sb.len()));
    for (k, (x, y)) in sa.iter().zip(sb.iter()).enumerate() {
        if x.t != y.t {
            identical = false;
            break;
        }
        let gap = match (&a.green, &b.green) {
            (Some(ga), Some(gb)) => (&ga[k] - &gb[k]).amax(),
            _ => (&x.q - &y.q).norm(),
        };
        out.push([x.t, gap]);
    }
    (out, identical)
}

pub fn compare(s: &Scenario, a: &RunRecord, b: &RunRecord) -> ComparisonReport {
    let (series, identical_grids) = gap_series(a, b);
    let sup_gap = series.iter().map(|g| g[1]).fold(0.0, f64::max);
    let terminal_gap = series.last().map_or(0.0, |g| g[1]);
    let mut energy_drift = BTreeMap::new();
    let mut reaction_power = BTreeMap::new();
    let mut constraint_drift = BTreeMap::new();
    for r in [a, b] {
        energy_drift.insert(r.label.clone(), r.result.energy_drift);
        reaction_power.insert(r.label.clone(), max_reaction_power(&r.result));
        constraint_drift.insert(r.label.clone(), r.result.max_drift);
    }
    ComparisonReport {
        formulations: [a.label.clone(), b.label.clone()],
        metric: if a.green.is_some() { "green_max_abs" } else { "q_euclidean" }.into(),
        threshold: s.threshold,
        identical_grids,
        sup_gap,
        terminal_gap,
        non_equivalent: sup_gap > s.threshold,
        terminal_states: [a, b].into_iter().filter_map(terminal).collect(),
        energy_drift,
        reaction_power,
        constraint_drift,
        gap_series: series,
    }
}

pub fn penalty_report(runs: &[RunRecord], kappas: &[f64]) -> PenaltyReport {
    let reference = &runs[0];
    let sup_gaps: Vec<f64> = runs[1..]
        .iter()
        .map(|r| gap_series(reference, r).0.iter().map(|g| g[1]).fold(0.0, f64::max))
        .collect();
    // Stiffer penalties must track the constrained motion more closely.
    let mut order: Vec<usize> = (0..kappas.len()).collect();
    order.sort_by(|&i, &j| kappas[i].total_cmp(&kappas[j]));
    let strictly_decreasing = order.windows(2).all(|w| sup_gaps[w[1]] < sup_gaps[w[0]]);
    PenaltyReport { reference: reference.label.clone(), kappas: kappas.to_vec(), sup_gaps, strictly_decreasing }
}

/// CSV with columns `t, q…, v…, lambda…, E_L, E_M, reaction_power, residual_max`.
pub fn trajectory_csv(r: &SimulationResult) -> String {
    let (n, m) = r.samples.first().map_or((0, 0), |x| (x.q.len(), x.lambda.len()));
    let mut out = String::new();
    out.push('t');
    for (prefix, count) in [("q", n), ("v", n), ("lambda", m)] {
        for i in 0..count {
            let _ = write!(out, ",{prefix}{i}");
        }
    }
    out.push_str(",E_L,E_M,reaction_power,residual_max\n");
    for x in &r.samples {
        let _ = write!(out, "{:.16e}", x.t);
        for value in x.q.iter().chain(x.v.iter()).chain(x.lambda.iter()) {
            let _ = write!(out, ",{value:.16e}");
        }
        let _ = writeln!(
            out,
            ",{:.16e},{:.16e},{:.16e},{:.16e}",
            x.e_l,
            x.e_m,
            x.reaction_power,
            x.residual_max()
        );
    }
    out
}

/// Write via a temporary file in the same directory and rename it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), RunError> {
    let io = |source| RunError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{file}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}

/// Overall status: the first run that did not complete decides.
pub fn overall_status(runs: &[RunRecord]) -> Status {
    runs.iter().map(|r| r.result.status).find(|s| *s != Status::Completed).unwrap_or(Status::Completed)
}

/// Execute `s` and write all artifacts into `out`.
pub fn run(s: &Scenario, out: &Path) -> Result<Outcome, RunError> {
    let runs = execute(s)?;
    let mut files = Vec::new();
    let mut infos = Vec::new();
    let mut csvs: Vec<(PathBuf, String)> = Vec::new();
    for r in &runs {
        let path = out.join(format!("{}_{}.csv", s.name, r.label));
        csvs.push((path.clone(), trajectory_csv(&r.result)));
        infos.push(info(r, path.display().to_string()));
    }
    // Trajectory files are independent, so they are written concurrently.
    std::thread::scope(|scope| {
        let handles: Vec<_> = csvs.iter().map(|(p, c)| scope.spawn(move || write_atomic(p, c))).collect();
        handles.into_iter().try_for_each(|h| h.join().expect("writer thread panicked"))
    })?;
    files.extend(csvs.into_iter().map(|(p, _)| p));

    let comparison = match (s.formulation, runs.as_slice()) {
        (Formulation::Both, [a, b]) => Some(compare(s, a, b)),
        _ => None,
    };
    if let Some(c) = &comparison {
        let path = out.join(format!("{}_comparison.json", s.name));
        write_atomic(&path, &to_json(c))?;
        files.push(path);
        let mut gap = String::from("t,gap\n");
        for g in &c.gap_series {
            let _ = writeln!(gap, "{:.16e},{:.16e}", g[0], g[1]);
        }
        let path = out.join(format!("{}_gap.csv", s.name));
        write_atomic(&path, &gap)?;
        files.push(path);
    }
    let penalty = (s.formulation == Formulation::PenaltySweep && runs.len() > 1).then(|| penalty_report(&runs, &s.kappas));

    let status = overall_status(&runs);
    let summary = RunSummary {
        scenario: s.name.clone(),
        description: s.description.clone(),
        formulation: s.formulation.name().into(),
        dt: s.integrator.dt,
        t_end: s.integrator.t_end,
        status: status.name().into(),
        runs: infos,
        comparison: comparison.clone().map(|mut c| {
            c.gap_series.clear();
            c
        }),
        penalty: penalty.clone(),
    };
    let path = out.join(format!("{}_summary.json", s.name));
    write_atomic(&path, &to_json(&summary))?;
    files.push(path);
    Ok(Outcome { summary, runs, comparison, penalty, status, files })
}
