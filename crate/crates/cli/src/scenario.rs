//! Scenario files: TOML documents describing a system, cost, segment plan
//! and solver settings.
//!
//! Every field is optional at parse time so that missing values can be
//! reported by their dotted path. [`load_scenario`] fills defaults and
//! returns both the runnable [`Scenario`] and the fully resolved file, which
//! is what the manifest records.

use std::path::Path;

use nalgebra::DMatrix;
use obsgain::cost::{CostSpec, ZetaPolicy, DEFAULT_EPSILON};
use obsgain::ode::{IntegratorConfig, DEFAULT_DT};
use obsgain::optimizer::OptimizerConfig;
use obsgain::sensitivity::JacobianMode;
use obsgain::synthesis::{SegmentPlan, SynthesisOptions};
use obsgain::systems::{ExprSystem, HolonomicBearing, LinearSystem};
use obsgain::ControlAffineSystem;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEGMENT_LENGTH: f64 = 1.0;
pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gramian: Option<GramianSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_gradient: Option<CheckGradientSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// `holonomic_bearing`, `lti` or `expressions`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
    #[serde(rename = "Qf", skip_serializing_if = "Option::is_none")]
    pub qf: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `fixed` (uses `zeta`) or `decay` (uses `beta`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta_policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psd_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// `analytic` or `finite-difference`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jacobian: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// Starting gain of the first segment and the baseline gain.
    #[serde(rename = "K0", skip_serializing_if = "Option::is_none")]
    pub k0: Option<Rows>,
    /// Gain evaluated by `gramian` and `check-gradient`; defaults to the
    /// starting gain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<Rows>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GramianSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckGradientSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svg: Option<bool>,
}

/// A validated scenario ready to run.
pub struct Scenario {
    pub name: String,
    pub system: Box<dyn ControlAffineSystem>,
    pub x0: Vec<f64>,
    pub spec: CostSpec,
    pub plan: SegmentPlan,
    pub options: SynthesisOptions,
    /// Gain for `gramian` and `check-gradient`, when given explicitly.
    pub gain: Option<DMatrix<f64>>,
    pub gramian_horizon: f64,
    pub check_segment: usize,
    pub delta: f64,
    pub output_dir: String,
    pub svg: bool,
    /// The input with every default written out.
    pub resolved: ScenarioFile,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("system", &self.system.name())
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn required<T: Clone>(v: &Option<T>, path: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| invalid(format!("{path} required")))
}

fn matrix(rows: &Rows, path: &str) -> CliResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!("{path} must be a non-empty rectangular list of rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{path} entries must be finite")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn shaped(rows: &Rows, path: &str, r: usize, c: usize) -> CliResult<DMatrix<f64>> {
    let m = matrix(rows, path)?;
    if m.shape() != (r, c) {
        return Err(invalid(format!("{path} must be {r}x{c}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn positive(v: f64, path: &str) -> CliResult<f64> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(format!("{path} must be positive and finite, got {v}")));
    }
    Ok(v)
}

fn with_path(path: &str) -> impl Fn(obsgain::Error) -> CliError + '_ {
    move |e| invalid(format!("{path}: {e}"))
}

fn build_system(s: &SystemSection) -> CliResult<Box<dyn ControlAffineSystem>> {
    let kind = required(&s.kind, "system.kind")?;
    let unused = |present: bool, field: &str| -> CliResult<()> {
        if present {
            return Err(invalid(format!("system.{field} is not used by system.kind = \"{kind}\"")));
        }
        Ok(())
    };
    match kind.as_str() {
        "holonomic_bearing" => {
            unused(s.a.is_some() || s.b.is_some() || s.c.is_some(), "A/B/C")?;
            unused(s.drift.is_some() || s.fields.is_some() || s.output.is_some(), "drift/fields/output")?;
            Ok(Box::new(HolonomicBearing))
        }
        "lti" => {
            unused(s.drift.is_some() || s.fields.is_some() || s.output.is_some(), "drift/fields/output")?;
            let a = matrix(&required(&s.a, "system.A")?, "system.A")?;
            let b = matrix(&required(&s.b, "system.B")?, "system.B")?;
            let c = matrix(&required(&s.c, "system.C")?, "system.C")?;
            Ok(Box::new(LinearSystem::new(a, b, c).map_err(with_path("system"))?))
        }
        "expressions" => {
            unused(s.a.is_some() || s.b.is_some() || s.c.is_some(), "A/B/C")?;
            let drift = required(&s.drift, "system.drift")?;
            let fields = required(&s.fields, "system.fields")?;
            let output = required(&s.output, "system.output")?;
            if let Some(i) = fields.iter().position(|f| f.len() != drift.len()) {
                return Err(invalid(format!(
                    "system.fields[{i}] has {} entries, system.drift has {}",
                    fields[i].len(),
                    drift.len()
                )));
            }
            Ok(Box::new(ExprSystem::parse(&drift, &fields, &output).map_err(with_path("system"))?))
        }
        other => Err(invalid(format!(
            "system.kind must be one of holonomic_bearing, lti, expressions; got \"{other}\""
        ))),
    }
}

fn build_plan(p: &PlanSection) -> CliResult<(SegmentPlan, PlanSection)> {
    if let Some(b) = &p.boundaries {
        if p.t_f.is_some() || p.segment_length.is_some() {
            return Err(invalid("plan.boundaries cannot be combined with plan.t_f or plan.segment_length"));
        }
        let plan = SegmentPlan::new(b.clone()).map_err(with_path("plan.boundaries"))?;
        return Ok((plan, p.clone()));
    }
    let t_f = positive(required(&p.t_f, "plan.t_f")?, "plan.t_f")?;
    let len = positive(p.segment_length.unwrap_or(DEFAULT_SEGMENT_LENGTH), "plan.segment_length")?;
    let plan = SegmentPlan::uniform(t_f, len).map_err(with_path("plan"))?;
    Ok((
        plan,
        PlanSection {
            t_f: Some(t_f),
            segment_length: Some(len),
            boundaries: None,
        },
    ))
}

/// Validates a parsed file and fills defaults.
pub fn resolve(file: &ScenarioFile) -> CliResult<Scenario> {
    let version = required(&file.schema_version, "schema_version")?;
    if version != SCHEMA_VERSION {
        return Err(invalid(format!("schema_version {version} is not supported (expected {SCHEMA_VERSION})")));
    }
    let system_section = required(&file.system, "system")?;
    let system = build_system(&system_section)?;
    let (n, p) = (system.state_dim(), system.input_dim());

    let x0 = required(&file.x0, "x0")?;
    if x0.len() != n {
        return Err(invalid(format!("x0 has {} entries but the system has {n} states", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x0 entries must be finite"));
    }

    let cost = required(&file.cost, "cost")?;
    let q = shaped(&required(&cost.q, "cost.Q")?, "cost.Q", n, n)?;
    let r = shaped(&required(&cost.r, "cost.R")?, "cost.R", p, p)?;
    let qf = shaped(&required(&cost.qf, "cost.Qf")?, "cost.Qf", n, n)?;
    let epsilon = positive(cost.epsilon.unwrap_or(DEFAULT_EPSILON), "cost.epsilon")?;
    let policy_name = cost.zeta_policy.clone().unwrap_or_else(|| "fixed".into());
    let (zeta_policy, zeta, beta) = match policy_name.as_str() {
        "fixed" => {
            if cost.beta.is_some() {
                return Err(invalid("cost.beta is only used with cost.zeta_policy = \"decay\""));
            }
            let z = positive(required(&cost.zeta, "cost.zeta")?, "cost.zeta")?;
            (ZetaPolicy::Fixed(z), Some(z), None)
        }
        "decay" => {
            if cost.zeta.is_some() {
                return Err(invalid("cost.zeta is only used with cost.zeta_policy = \"fixed\""));
            }
            let b = positive(required(&cost.beta, "cost.beta")?, "cost.beta")?;
            (ZetaPolicy::DecayRule { beta: b }, None, Some(b))
        }
        other => return Err(invalid(format!("cost.zeta_policy must be \"fixed\" or \"decay\", got \"{other}\""))),
    };
    let spec = CostSpec::new(q, r, qf, epsilon, zeta_policy).map_err(with_path("cost"))?;

    let (plan, plan_section) = build_plan(&required(&file.plan, "plan")?)?;

    let opt = file.optimizer.clone().unwrap_or_default();
    let defaults = OptimizerConfig::default();
    let optimizer = OptimizerConfig {
        mu0: opt.mu0.unwrap_or(defaults.mu0),
        grad_tol: opt.grad_tol.unwrap_or(defaults.grad_tol),
        max_iters: opt.max_iters.unwrap_or(defaults.max_iters),
        psd_tol: opt.psd_tol.unwrap_or(defaults.psd_tol),
    };
    optimizer.validate().map_err(|e| invalid(e.to_string()))?;

    let integ = file.integrator.clone().unwrap_or_default();
    let dt = positive(integ.dt.unwrap_or(DEFAULT_DT), "integrator.dt")?;
    let jacobian = integ.jacobian.clone().unwrap_or_else(|| "analytic".into());
    let jacobian_mode = match jacobian.as_str() {
        "analytic" => JacobianMode::Analytic,
        "finite-difference" => JacobianMode::FiniteDifference,
        other => {
            return Err(invalid(format!(
                "integrator.jacobian must be \"analytic\" or \"finite-difference\", got \"{other}\""
            )))
        }
    };

    let ctrl = file.controller.clone().unwrap_or_default();
    let k0 = ctrl.k0.as_ref().map(|m| shaped(m, "controller.K0", p, n)).transpose()?;
    let gain = ctrl.gain.as_ref().map(|m| shaped(m, "controller.gain", p, n)).transpose()?;

    let horizon = plan.horizon();
    let gramian_horizon = positive(
        file.gramian.as_ref().and_then(|g| g.horizon).unwrap_or(horizon),
        "gramian.horizon",
    )?;
    if gramian_horizon > horizon {
        return Err(invalid(format!("gramian.horizon {gramian_horizon} exceeds the plan horizon {horizon}")));
    }

    let cg = file.check_gradient.clone().unwrap_or_default();
    let check_segment = cg.segment.unwrap_or(0);
    if check_segment >= plan.segment_count() {
        return Err(invalid(format!(
            "check_gradient.segment {check_segment} is out of range (plan has {} segments)",
            plan.segment_count()
        )));
    }
    let delta = positive(cg.delta.unwrap_or(DEFAULT_DELTA), "check_gradient.delta")?;

    let out = file.output.clone().unwrap_or_default();
    let output_dir = out.directory.clone().unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into());
    let svg = out.svg.unwrap_or(true);
    let name = file.name.clone().unwrap_or_else(|| system.name().to_string());

    let resolved = ScenarioFile {
        schema_version: Some(version),
        name: Some(name.clone()),
        x0: Some(x0.clone()),
        system: Some(system_section),
        cost: Some(CostSection {
            q: Some(rows_of(&spec.q)),
            r: Some(rows_of(&spec.r)),
            qf: Some(rows_of(&spec.qf)),
            epsilon: Some(epsilon),
            zeta_policy: Some(policy_name),
            zeta,
            beta,
        }),
        plan: Some(plan_section),
        optimizer: Some(OptimizerSection {
            mu0: Some(optimizer.mu0),
            grad_tol: Some(optimizer.grad_tol),
            max_iters: Some(optimizer.max_iters),
            psd_tol: Some(optimizer.psd_tol),
        }),
        integrator: Some(IntegratorSection {
            dt: Some(dt),
            jacobian: Some(jacobian),
        }),
        controller: (ctrl.k0.is_some() || ctrl.gain.is_some()).then_some(ctrl),
        gramian: Some(GramianSection {
            horizon: Some(gramian_horizon),
        }),
        check_gradient: Some(CheckGradientSection {
            segment: Some(check_segment),
            delta: Some(delta),
        }),
        output: Some(OutputSection {
            directory: Some(output_dir.clone()),
            svg: Some(svg),
        }),
    };

    Ok(Scenario {
        name,
        system,
        x0,
        spec,
        plan,
        options: SynthesisOptions {
            integrator: IntegratorConfig::new(dt).map_err(with_path("integrator.dt"))?,
            optimizer,
            initial_gain: k0,
            jacobian_mode,
        },
        gain,
        gramian_horizon,
        check_segment,
        delta,
        output_dir,
        svg,
        resolved,
    })
}

/// Parses scenario text. Errors carry the line and column of the problem.
pub fn parse_scenario(text: &str) -> CliResult<ScenarioFile> {
    toml::from_str(text).map_err(|e| invalid(format!("scenario parse error: {}", e.to_string().trim_end())))
}

/// Loads a `.scenario` (TOML) file, or replays the scenario recorded in a
/// `manifest.json` written by an earlier run.
pub fn load_scenario(path: &Path) -> CliResult<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read scenario {}: {e}", path.display())))?;
    let file = if path.extension().is_some_and(|e| e == "json") {
        #[derive(Deserialize)]
        struct Manifest {
            scenario: ScenarioFile,
        }
        serde_json::from_str::<Manifest>(&text)
            .map_err(|e| invalid(format!("manifest parse error: {e}")))?
            .scenario
    } else {
        parse_scenario(&text)?
    };
    resolve(&file)
}
