//! Subcommand implementations and their artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use obsgain::cost::zeta_for_segment;
use obsgain::gramian::{empirical_gramian, GramianResult};
use obsgain::model::{simulate_policy, Policy};
use obsgain::optimizer::Status;
use obsgain::par::Execution;
use obsgain::selftest;
use obsgain::sensitivity::{cost_and_gradient, fd_gradient, AugmentedState, Segment};
use obsgain::synthesis::{
    baseline, decay_rate_estimate, lemma1_margin, lyapunov_trace, synthesize, terminal_decrease_residual,
    SynthesisResult,
};
use obsgain::{GainMatrix, Trajectory};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::scenario::{rows_of, Scenario};
use crate::svg::{Chart, Series, PALETTE};

/// Monotonicity tolerance of the Lyapunov monitor, per sample.
pub const LYAPUNOV_TOL: f64 = 1e-9;
/// Relative error that `check-gradient` accepts.
pub const GRADIENT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gramian,
    Synthesize,
    Baseline,
    Compare,
    CheckGradient,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Gramian => "gramian",
            Command::Synthesize => "synthesize",
            Command::Baseline => "baseline",
            Command::Compare => "compare",
            Command::CheckGradient => "check-gradient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Overrides the scenario's output directory.
    pub out_dir: Option<PathBuf>,
    /// Exit with the non-convergence status when any segment is capped.
    pub require_convergence: bool,
    /// Recorded in the manifest.
    pub scenario_path: String,
}

/// What a finished command reports on stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    /// Set when the run completed and wrote its artifacts but must still
    /// exit with a failure status.
    pub error: Option<CliError>,
}

#[derive(Debug, Serialize)]
pub struct GramianSummary {
    pub horizon: f64,
    pub epsilon: f64,
    pub gramian: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub condition_ratio: f64,
    pub min_eigenvalue: f64,
    pub determinant: f64,
    pub trace_index: f64,
}

impl GramianSummary {
    fn new(g: &GramianResult) -> Self {
        Self {
            horizon: g.horizon,
            epsilon: g.epsilon,
            gramian: rows_of(&g.w),
            singular_values: g.singular_values(),
            condition_ratio: g.condition_ratio(),
            min_eigenvalue: g.min_eigenvalue(),
            determinant: g.determinant(),
            trace_index: g.trace_index,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub zeta: f64,
    pub cost: f64,
    pub int_l1: f64,
    pub int_l2: f64,
    pub observability_index: f64,
    pub unsaturated_reward: f64,
    pub iterations: usize,
    pub status: Option<&'static str>,
    pub final_grad_norm: Option<f64>,
    pub gain: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct Monitors {
    pub lyapunov_verdict: bool,
    pub lyapunov_nonincreasing: bool,
    pub lyapunov_positive: bool,
    pub lyapunov_max_increase: f64,
    pub lyapunov_min_value: f64,
    pub decay_rate_estimate: f64,
    pub lemma1_margin: f64,
    pub terminal_decrease_residual: f64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub controller: &'static str,
    pub total_cost: f64,
    pub observability_integral: f64,
    pub final_state: Vec<f64>,
    pub final_norm: f64,
    pub initial_gain: Vec<Vec<f64>>,
    pub converged_segments: usize,
    pub capped_segments: usize,
    pub gramian: GramianSummary,
    pub monitors: Monitors,
    pub segments: Vec<SegmentSummary>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    scenario_path: &'a str,
    require_convergence: bool,
    output_directory: String,
    scenario: &'a crate::scenario::ScenarioFile,
}

fn output_dir(sc: &Scenario, opts: &RunOptions) -> CliResult<PathBuf> {
    let dir = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from(&sc.output_dir));
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str, files: &mut Vec<PathBuf>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_file(path, &text, files)
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>], files: &mut Vec<PathBuf>) -> CliResult<()> {
    let io = |e: csv::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush()?;
    files.push(path.to_path_buf());
    Ok(())
}

fn write_manifest(dir: &Path, sc: &Scenario, cmd: Command, opts: &RunOptions, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let manifest = Manifest {
        tool: "obsgain",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.as_str(),
        scenario_path: &opts.scenario_path,
        require_convergence: opts.require_convergence,
        output_directory: dir.display().to_string(),
        scenario: &sc.resolved,
    };
    write_json(&dir.join("manifest.json"), &manifest, files)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn starting_gain(sc: &Scenario) -> CliResult<DMatrix<f64>> {
    if let Some(k) = &sc.options.initial_gain {
        return Ok(k.clone());
    }
    let (a, b) = obsgain::synthesis::linearize(sc.system.as_ref(), &sc.x0)?;
    Ok(obsgain::synthesis::lqr_gain(&a, &b, &sc.spec.q, &sc.spec.r, None)?.k)
}

fn evaluation_gain(sc: &Scenario) -> CliResult<DMatrix<f64>> {
    match &sc.gain {
        Some(k) => Ok(k.clone()),
        None => starting_gain(sc),
    }
}

fn gramian_under(sc: &Scenario, policy: &Policy) -> CliResult<GramianResult> {
    Ok(empirical_gramian(
        sc.system.as_ref(),
        policy,
        &sc.x0,
        sc.spec.epsilon,
        sc.gramian_horizon,
        &sc.options.integrator,
        Execution::default(),
    )?)
}

fn summarize(sc: &Scenario, res: &SynthesisResult, controller: &'static str) -> CliResult<RunSummary> {
    let lyap = lyapunov_trace(res, &sc.spec, LYAPUNOV_TOL);
    let monitors = Monitors {
        lyapunov_verdict: lyap.verdict(),
        lyapunov_nonincreasing: lyap.nonincreasing,
        lyapunov_positive: lyap.positive,
        lyapunov_max_increase: lyap.max_increase,
        lyapunov_min_value: lyap.min_value,
        decay_rate_estimate: decay_rate_estimate(&res.trajectory, &sc.spec.q, res.plan.boundaries()),
        lemma1_margin: lemma1_margin(res, &sc.spec),
        terminal_decrease_residual: terminal_decrease_residual(sc.system.as_ref(), res, &sc.spec)?,
    };
    let gramian = GramianSummary::new(&gramian_under(sc, &res.policy())?);
    let segments: Vec<SegmentSummary> = res
        .segments
        .iter()
        .zip(&res.gains)
        .map(|(s, k)| SegmentSummary {
            index: s.index,
            start: s.start,
            end: s.end,
            zeta: s.zeta,
            cost: s.cost,
            int_l1: s.int_l1,
            int_l2: s.int_l2,
            observability_index: s.observability_index,
            unsaturated_reward: s.unsaturated_reward,
            iterations: s.iterations,
            status: s.status.map(Status::as_str),
            final_grad_norm: s.final_grad_norm,
            gain: rows_of(k.entries()),
        })
        .collect();
    let count = |st: Status| res.segments.iter().filter(|s| s.status == Some(st)).count();
    Ok(RunSummary {
        controller,
        total_cost: res.total_cost(&sc.spec),
        observability_integral: res.observability_integral(),
        final_state: res.final_state().to_vec(),
        final_norm: norm(res.final_state()),
        initial_gain: rows_of(&res.initial_gain),
        converged_segments: count(Status::Converged),
        capped_segments: count(Status::IterationCapped),
        gramian,
        monitors,
        segments,
    })
}

fn summary_line(s: &RunSummary) -> String {
    let mut line = format!(
        "{}: total cost {:.6}, final |x| {:.3e}, sigma2/sigma1 {:.3e}, lyapunov {}",
        s.controller,
        s.total_cost,
        s.final_norm,
        s.gramian.condition_ratio,
        if s.monitors.lyapunov_verdict { "ok" } else { "violated" }
    );
    if s.converged_segments + s.capped_segments > 0 {
        line.push_str(&format!(
            ", {} converged / {} capped segments",
            s.converged_segments, s.capped_segments
        ));
    }
    line
}

fn header(prefix: &str, sym: char, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{sym}{i}")).collect()
}

fn controls_of(t: &Trajectory) -> CliResult<&Vec<Vec<f64>>> {
    t.controls
        .as_ref()
        .ok_or_else(|| CliError::Numerical("trajectory has no recorded controls".into()))
}

/// Columns `t, <prefix>x1.. ` for each run, sharing one time grid.
fn table(runs: &[(&str, &SynthesisResult)], controls: bool) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let times = &runs[0].1.trajectory.times;
    if runs.iter().any(|(_, r)| r.trajectory.times != *times) {
        return Err(CliError::Numerical("runs disagree on the time grid".into()));
    }
    let mut head = vec!["t".to_string()];
    let mut columns: Vec<&Vec<Vec<f64>>> = Vec::new();
    for (prefix, r) in runs {
        let data = if controls {
            controls_of(&r.trajectory)?
        } else {
            &r.trajectory.states
        };
        let width = data.first().map_or(0, Vec::len);
        head.extend(header(prefix, if controls { 'u' } else { 'x' }, width));
        columns.push(data);
    }
    let rows = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut row = vec![t];
            for c in &columns {
                row.extend_from_slice(&c[k]);
            }
            row
        })
        .collect();
    Ok((head, rows))
}

fn charts(runs: &[(&str, &SynthesisResult)], title: &str) -> CliResult<(Chart, Chart)> {
    let n = runs[0].1.trajectory.states.first().map_or(0, Vec::len);
    let mut traj = Vec::new();
    let mut ctrl = Vec::new();
    for (r_idx, (label, r)) in runs.iter().enumerate() {
        let tr = &r.trajectory;
        let dashed = r_idx > 0;
        if n == 2 {
            traj.push(Series {
                label: label.to_string(),
                xs: tr.states.iter().map(|x| x[0]).collect(),
                ys: tr.states.iter().map(|x| x[1]).collect(),
                color: PALETTE[r_idx % PALETTE.len()].into(),
                dashed,
            });
        } else {
            for i in 0..n {
                traj.push(Series {
                    label: format!("{label} x{}", i + 1),
                    xs: tr.times.clone(),
                    ys: tr.states.iter().map(|x| x[i]).collect(),
                    color: PALETTE[i % PALETTE.len()].into(),
                    dashed,
                });
            }
        }
        let u = controls_of(tr)?;
        let p = u.first().map_or(0, Vec::len);
        for a in 0..p {
            ctrl.push(Series {
                label: format!("{label} u{}", a + 1),
                xs: tr.times.clone(),
                ys: u.iter().map(|v| v[a]).collect(),
                color: PALETTE[a % PALETTE.len()].into(),
                dashed,
            });
        }
    }
    let (x_label, y_label) = if n == 2 { ("x1", "x2") } else { ("t", "state") };
    Ok((
        Chart {
            title: format!("Trajectories: {title}"),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: traj,
            equal_aspect: n == 2,
        },
        Chart {
            title: format!("Controls: {title}"),
            x_label: "t".into(),
            y_label: "u".into(),
            series: ctrl,
            equal_aspect: false,
        },
    ))
}

fn write_runs(
    dir: &Path,
    sc: &Scenario,
    runs: &[(&str, &SynthesisResult)],
    summary: &impl Serialize,
    files: &mut Vec<PathBuf>,
) -> CliResult<()> {
    let prefixed = runs.len() > 1;
    let named: Vec<(String, &SynthesisResult)> = runs
        .iter()
        .map(|(l, r)| (if prefixed { format!("{l}_") } else { String::new() }, *r))
        .collect();
    let refs: Vec<(&str, &SynthesisResult)> = named.iter().map(|(p, r)| (p.as_str(), *r)).collect();
    let (head, rows) = table(&refs, false)?;
    write_csv(&dir.join("trajectory.csv"), &head, &rows, files)?;
    let (head, rows) = table(&refs, true)?;
    write_csv(&dir.join("controls.csv"), &head, &rows, files)?;
    write_json(&dir.join("summary.json"), summary, files)?;
    if sc.svg {
        let (traj, ctrl) = charts(runs, &sc.name)?;
        write_file(&dir.join("trajectories.svg"), &traj.render(), files)?;
        write_file(&dir.join("controls.svg"), &ctrl.render(), files)?;
    }
    Ok(())
}

fn capped_check(opts: &RunOptions, summaries: &[&RunSummary]) -> Option<CliError> {
    let capped: usize = summaries.iter().map(|s| s.capped_segments).sum();
    (opts.require_convergence && capped > 0).then(|| {
        CliError::NonConvergence(format!("{capped} segment optimization(s) reached the iteration cap"))
    })
}

fn finish(files: Vec<PathBuf>, mut lines: Vec<String>, error: Option<CliError>) -> Report {
    lines.push(format!("wrote {} files", files.len()));
    Report { lines, files, error }
}

pub fn run_gramian(sc: &Scenario, opts: &RunOptions) -> CliResult<Report> {
    #[derive(Serialize)]
    struct Out {
        gain: Vec<Vec<f64>>,
        #[serde(flatten)]
        gramian: GramianSummary,
    }
    let k = evaluation_gain(sc)?;
    let g = gramian_under(sc, &Policy::Gain(GainMatrix::constant(k.clone())?))?;
    let dir = output_dir(sc, opts)?;
    let mut files = Vec::new();
    let out = Out {
        gain: rows_of(&k),
        gramian: GramianSummary::new(&g),
    };
    write_json(&dir.join("summary.json"), &out, &mut files)?;
    write_manifest(&dir, sc, Command::Gramian, opts, &mut files)?;
    let line = format!(
        "gramian over [0, {}]: singular values {:?}, trace index {:.6e}",
        g.horizon,
        out.gramian.singular_values,
        g.trace_index
    );
    Ok(finish(files, vec![line], None))
}

pub fn run_single(sc: &Scenario, opts: &RunOptions, synthesized: bool) -> CliResult<Report> {
    let (res, label, cmd) = if synthesized {
        (synthesize(sc.system.as_ref(), &sc.spec, &sc.plan, &sc.x0, &sc.options)?, "synthesized", Command::Synthesize)
    } else {
        (baseline(sc.system.as_ref(), &sc.spec, &sc.plan, &sc.x0, &sc.options)?, "baseline", Command::Baseline)
    };
    let summary = summarize(sc, &res, label)?;
    let dir = output_dir(sc, opts)?;
    let mut files = Vec::new();
    write_runs(&dir, sc, &[(label, &res)], &summary, &mut files)?;
    write_manifest(&dir, sc, cmd, opts, &mut files)?;
    Ok(finish(files, vec![summary_line(&summary)], capped_check(opts, &[&summary])))
}

pub fn run_compare(sc: &Scenario, opts: &RunOptions) -> CliResult<Report> {
    #[derive(Serialize)]
    struct Out<'a> {
        cost_margin: f64,
        observability_ratio: f64,
        synthesized: &'a RunSummary,
        baseline: &'a RunSummary,
    }
    let syn = synthesize(sc.system.as_ref(), &sc.spec, &sc.plan, &sc.x0, &sc.options)?;
    let base = baseline(sc.system.as_ref(), &sc.spec, &sc.plan, &sc.x0, &sc.options)?;
    let s_syn = summarize(sc, &syn, "synthesized")?;
    let s_base = summarize(sc, &base, "baseline")?;
    let out = Out {
        cost_margin: s_base.total_cost - s_syn.total_cost,
        observability_ratio: s_syn.observability_integral / s_base.observability_integral,
        synthesized: &s_syn,
        baseline: &s_base,
    };
    let dir = output_dir(sc, opts)?;
    let mut files = Vec::new();
    write_runs(&dir, sc, &[("synthesized", &syn), ("baseline", &base)], &out, &mut files)?;
    write_manifest(&dir, sc, Command::Compare, opts, &mut files)?;
    let lines = vec![
        summary_line(&s_syn),
        summary_line(&s_base),
        format!("cost margin (baseline - synthesized) {:.6}", out.cost_margin),
    ];
    Ok(finish(files, lines, capped_check(opts, &[&s_syn])))
}

pub fn run_check_gradient(sc: &Scenario, opts: &RunOptions) -> CliResult<Report> {
    #[derive(Serialize)]
    struct Out {
        segment: usize,
        start: f64,
        end: f64,
        zeta: f64,
        start_state: Vec<f64>,
        gain: Vec<Vec<f64>>,
        cost: f64,
        gradient: Vec<f64>,
        delta: f64,
        fd_gradient: Vec<f64>,
        relative_error: f64,
        fd_gradient_half_delta: Vec<f64>,
        relative_error_half_delta: f64,
        error_ratio: f64,
        tolerance: f64,
        passed: bool,
    }
    let k = evaluation_gain(sc)?;
    let j = sc.check_segment;
    let (t0, t1) = sc.plan.segment(j);
    let sys = sc.system.as_ref();
    let x_start = if t0 > sc.plan.boundaries()[0] {
        let policy = Policy::Gain(GainMatrix::constant(k.clone())?);
        let traj = simulate_policy(sys, &policy, &sc.x0, sc.plan.boundaries()[0], t0, &sc.options.integrator)?;
        traj.last_state().expect("nonempty").to_vec()
    } else {
        sc.x0.clone()
    };
    let zeta = zeta_for_segment(sc.spec.zeta_policy, &x_start, &sc.spec.q, t0, t1).value;
    let seg = Segment::new(sys, &sc.spec, zeta, t0, t1, sc.options.integrator)?.with_mode(sc.options.jacobian_mode);
    let gain = GainMatrix::new(k.clone(), t0, t1)?;
    let z0 = AugmentedState::initial(&x_start, &sc.spec)?;
    let (cost, grad) = cost_and_gradient(&seg, &gain, &z0)?;
    let exec = Execution::default();
    let fd = fd_gradient(&seg, &gain, &z0, sc.delta, exec)?;
    let fd_half = fd_gradient(&seg, &gain, &z0, 0.5 * sc.delta, exec)?;
    let rel = |f: &[f64]| {
        let diff: Vec<f64> = grad.iter().zip(f).map(|(a, b)| a - b).collect();
        norm(&diff) / norm(f).max(1.0)
    };
    let (e1, e2) = (rel(&fd), rel(&fd_half));
    let out = Out {
        segment: j,
        start: t0,
        end: t1,
        zeta,
        start_state: x_start,
        gain: rows_of(&k),
        cost: cost.j,
        gradient: grad,
        delta: sc.delta,
        fd_gradient: fd,
        relative_error: e1,
        fd_gradient_half_delta: fd_half,
        relative_error_half_delta: e2,
        error_ratio: e1 / e2,
        tolerance: GRADIENT_TOL,
        passed: e1 <= GRADIENT_TOL,
    };
    let dir = output_dir(sc, opts)?;
    let mut files = Vec::new();
    write_json(&dir.join("summary.json"), &out, &mut files)?;
    write_manifest(&dir, sc, Command::CheckGradient, opts, &mut files)?;
    let line = format!(
        "gradient check on segment {j} [{t0}, {t1}): relative error {e1:.3e} at delta {}, {e2:.3e} at delta {}",
        sc.delta,
        0.5 * sc.delta
    );
    let error = (!out.passed).then(|| CliError::CheckFailed(format!("relative error {e1:.3e} exceeds {GRADIENT_TOL}")));
    Ok(finish(files, vec![line], error))
}

/// Runs the built-in acceptance checks; `only` restricts to one criterion.
pub fn run_selftest(only: Option<u8>, out_dir: Option<&Path>) -> CliResult<Report> {
    #[derive(Serialize)]
    struct Entry<'a> {
        id: u8,
        title: &'a str,
        passed: bool,
        detail: &'a str,
    }
    let outcomes = match only {
        Some(id) if (1..=10).contains(&id) => vec![selftest::run(id)],
        Some(id) => return Err(CliError::Validation(format!("criterion must be in 1..=10, got {id}"))),
        None => selftest::run_all(Execution::default()),
    };
    let mut lines: Vec<String> = outcomes.iter().map(|o| o.line()).collect();
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    lines.push(format!("selftest: {}/{} passed", outcomes.len() - failed, outcomes.len()));
    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let entries: Vec<Entry> = outcomes
            .iter()
            .map(|o| Entry {
                id: o.id,
                title: o.title,
                passed: o.passed,
                detail: &o.detail,
            })
            .collect();
        write_json(&dir.join("selftest.json"), &entries, &mut files)?;
    }
    let error = (failed > 0).then(|| CliError::CheckFailed(format!("{failed} selftest criteria failed")));
    Ok(Report { lines, files, error })
}
