//! Segment-by-segment synthesis, the LQR baseline and stability monitors.

use nalgebra::DMatrix;

use crate::cost::{zeta_for_segment, CostSpec, ZetaPolicy};
use crate::error::{check_len, Error, Result};
use crate::linalg::{frobenius, is_hurwitz, quad_form, solve_continuous_lyapunov, symmetrize};
use crate::model::{simulate_policy, ControlAffineSystem, GainMatrix, Policy, Trajectory};
use crate::ode::IntegratorConfig;
use crate::optimizer::{optimize_segment, IterationTrace, OptimizerConfig, Status};
use crate::sensitivity::{run_segment, AugmentedState, JacobianMode, Segment, SegmentRecord};

/// Segment boundaries `0 = t_0 < t_1 < … < t_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    boundaries: Vec<f64>,
}

impl SegmentPlan {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::InvalidArgument("plan needs at least two boundaries".into()));
        }
        if boundaries[0] != 0.0 {
            return Err(Error::InvalidArgument(format!("plan must start at 0, got {}", boundaries[0])));
        }
        if boundaries.iter().any(|t| !t.is_finite()) || boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("plan boundaries must be finite and strictly increasing".into()));
        }
        Ok(Self { boundaries })
    }

    /// Equal segments of `length`; a shorter final segment absorbs any
    /// remainder.
    pub fn uniform(t_f: f64, length: f64) -> Result<Self> {
        if !(t_f > 0.0) || !(length > 0.0) {
            return Err(Error::InvalidArgument(format!("plan needs t_f > 0 and segment length > 0, got {t_f}, {length}")));
        }
        let ratio = t_f / length;
        let count = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        }
        .max(1);
        let mut b: Vec<f64> = (0..count).map(|j| j as f64 * length).collect();
        b.push(t_f);
        Self::new(b)
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn segment_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.boundaries.last().expect("nonempty plan")
    }

    pub fn segment(&self, j: usize) -> (f64, f64) {
        (self.boundaries[j], self.boundaries[j + 1])
    }
}

/// Stabilizing Riccati solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// `u = K x` with `K = −R⁻¹BᵀP`.
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Frobenius norm of `AᵀP + PA − PBR⁻¹BᵀP + Q`.
    pub residual: f64,
    pub iterations: usize,
}

/// Infinite-horizon LQR by Newton–Kleinman iteration.
///
/// The starting gain is zero when `A` is Hurwitz, `k0` when supplied, and
/// otherwise Bass's gain `−BᵀZ⁻¹` with `(A+αI)Z + Z(A+αI)ᵀ = 2BBᵀ`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, k0: Option<&DMatrix<f64>>) -> Result<LqrSolution> {
    let n = a.nrows();
    let p = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (p, p) {
        return Err(Error::InvalidArgument("lqr_gain: inconsistent matrix shapes".into()));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Riccati("R is singular".into()))?;
    let mut k = if let Some(k0) = k0 {
        if k0.shape() != (p, n) {
            return Err(Error::InvalidArgument("lqr_gain: initial gain has the wrong shape".into()));
        }
        k0.clone()
    } else if is_hurwitz(a) {
        DMatrix::zeros(p, n)
    } else {
        let alpha = frobenius(a) + 1.0;
        let shifted = a + DMatrix::identity(n, n) * alpha;
        let z = solve_continuous_lyapunov(&(-shifted.transpose()), &(b * b.transpose() * 2.0))?;
        let z_inv = z
            .try_inverse()
            .ok_or_else(|| Error::Riccati("(A, B) is not stabilizable: Bass gramian is singular".into()))?;
        -b.transpose() * z_inv
    };
    if !is_hurwitz(&(a + b * &k)) {
        return Err(Error::Riccati("initial gain does not stabilize (A, B)".into()));
    }
    let residual_of = |pm: &DMatrix<f64>| {
        frobenius(&(a.transpose() * pm + pm * a - pm * b * &r_inv * b.transpose() * pm + q))
    };
    let mut pm = DMatrix::zeros(n, n);
    for it in 1..=100 {
        let acl = a + b * &k;
        let m = q + k.transpose() * r * &k;
        pm = symmetrize(&solve_continuous_lyapunov(&acl, &m)?);
        let k_next = -(&r_inv * b.transpose() * &pm);
        let change = frobenius(&(&k_next - &k));
        k = k_next;
        let res = residual_of(&pm);
        if change <= 1e-13 * (1.0 + frobenius(&k)) || res <= 1e-12 * (1.0 + frobenius(&pm)) {
            // One more Newton step is free and tightens the residual.
            let acl = a + b * &k;
            let m = q + k.transpose() * r * &k;
            pm = symmetrize(&solve_continuous_lyapunov(&acl, &m)?);
            k = -(&r_inv * b.transpose() * &pm);
            return Ok(LqrSolution {
                residual: residual_of(&pm),
                k,
                p: pm,
                iterations: it + 1,
            });
        }
    }
    Err(Error::Riccati(format!("Newton–Kleinman did not converge; residual {}", residual_of(&pm))))
}

/// Jacobian linearization `(A, B)` at `(x, u = 0)`.
pub fn linearize(sys: &dyn ControlAffineSystem, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = (sys.state_dim(), sys.input_dim());
    check_len("linearization point", n, x)?;
    let mut a = vec![0.0; n * n];
    sys.dynamics_jacobian(x, &vec![0.0; p], &mut a)?;
    let mut b = vec![0.0; n * p];
    sys.control_matrix(x, &mut b)?;
    Ok((DMatrix::from_row_slice(n, n, &a), DMatrix::from_row_slice(n, p, &b)))
}

/// Closed loop under gains that tile a horizon; an empty list is a zero
/// horizon and returns `[x0]` at `t = 0`.
pub fn simulate_piecewise(sys: &dyn ControlAffineSystem, gains: &[GainMatrix], x0: &[f64], cfg: &IntegratorConfig) -> Result<Trajectory> {
    check_len("initial state", sys.state_dim(), x0)?;
    let Some(first) = gains.first() else {
        return Ok(Trajectory {
            times: vec![0.0],
            states: vec![x0.to_vec()],
            ..Default::default()
        });
    };
    if gains.windows(2).any(|w| w[0].end() != w[1].start()) {
        return Err(Error::InvalidArgument("gains must tile the horizon without gaps".into()));
    }
    let t_end = gains.last().expect("nonempty").end();
    if !t_end.is_finite() {
        return Err(Error::InvalidArgument("last gain must have a finite end".into()));
    }
    simulate_policy(sys, &Policy::Piecewise(gains.to_vec()), x0, first.start(), t_end, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub integrator: IntegratorConfig,
    pub optimizer: OptimizerConfig,
    /// Starting gain for the first segment; the LQR gain of the
    /// linearization at `x0` when absent.
    pub initial_gain: Option<DMatrix<f64>>,
    pub jacobian_mode: JacobianMode,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            optimizer: OptimizerConfig::default(),
            initial_gain: None,
            jacobian_mode: JacobianMode::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub zeta: f64,
    /// Segment cost `∫(l1 − l2) + L(x(t_{j+1}))`.
    pub cost: f64,
    pub int_l1: f64,
    pub int_l2: f64,
    /// `∫ density dt`: trace of the segment's empirical Gramian.
    pub observability_index: f64,
    /// `∫ e^{−t} density dt`.
    pub unsaturated_reward: f64,
    pub iterations: usize,
    /// `None` for fixed-gain runs.
    pub status: Option<Status>,
    pub final_grad_norm: Option<f64>,
    pub trace: IterationTrace,
    pub record: SegmentRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub plan: SegmentPlan,
    pub gains: Vec<GainMatrix>,
    pub segments: Vec<SegmentReport>,
    /// Nominal closed loop with controls; boundary samples appear once.
    pub trajectory: Trajectory,
    pub initial_gain: DMatrix<f64>,
}

impl SynthesisResult {
    /// `Σ_j ∫(l1 − l2) dt + L(x(t_f))`.
    pub fn total_cost(&self, spec: &CostSpec) -> f64 {
        let running: f64 = self.segments.iter().map(|s| s.int_l1 - s.int_l2).sum();
        running + quad_form(&spec.qf, self.trajectory.last_state().expect("nonempty"))
    }

    /// `Σ_j ∫ e^{−t} density dt` with no saturation.
    pub fn observability_integral(&self) -> f64 {
        self.segments.iter().map(|s| s.unsaturated_reward).sum()
    }

    pub fn zetas(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.zeta).collect()
    }

    pub fn policy(&self) -> Policy {
        Policy::Piecewise(self.gains.clone())
    }

    pub fn final_state(&self) -> &[f64] {
        self.trajectory.last_state().expect("nonempty")
    }
}

fn trapezoid(times: &[f64], v: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(v.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

fn check_inputs(sys: &dyn ControlAffineSystem, spec: &CostSpec, x0: &[f64]) -> Result<()> {
    spec.validate()?;
    if sys.state_dim() != spec.state_dim() || sys.input_dim() != spec.input_dim() {
        return Err(Error::InvalidArgument("cost weights do not match the system dimensions".into()));
    }
    check_len("initial state", sys.state_dim(), x0)
}

/// Segment-local evaluation shared by synthesis and the baseline.
fn segment_pass<F>(sys: &dyn ControlAffineSystem, spec: &CostSpec, plan: &SegmentPlan, x0: &[f64], opts: &SynthesisOptions, initial: DMatrix<f64>, mut choose: F) -> Result<SynthesisResult>
where
    F: FnMut(&Segment, &AugmentedState, &GainMatrix) -> Result<(GainMatrix, Option<Status>, IterationTrace)>,
{
    let mut x = x0.to_vec();
    let mut warm = GainMatrix::constant(initial.clone())?;
    let mut gains = Vec::with_capacity(plan.segment_count());
    let mut segments = Vec::with_capacity(plan.segment_count());
    let mut trajectory = Trajectory::default();
    for j in 0..plan.segment_count() {
        let wrap = |e: Error| Error::Segment {
            segment: j,
            source: Box::new(e),
        };
        let (t0, t1) = plan.segment(j);
        let zeta = zeta_for_segment(spec.zeta_policy, &x, &spec.q, t0, t1).value;
        let seg = Segment::new(sys, spec, zeta, t0, t1, opts.integrator)
            .map_err(wrap)?
            .with_mode(opts.jacobian_mode);
        let z0 = AugmentedState::initial(&x, spec).map_err(wrap)?;
        let warm_here = warm.with_interval(t0, t1).map_err(wrap)?;
        let (k, status, trace) = choose(&seg, &z0, &warm_here).map_err(wrap)?;
        let k = k.with_interval(t0, t1).map_err(wrap)?;
        let out = run_segment(&seg, &k, &z0, false, true).map_err(wrap)?;
        let record = out.record.expect("record requested");
        let discount: Vec<f64> = record
            .times
            .iter()
            .zip(&record.density)
            .map(|(t, d)| (-t).exp() * d)
            .collect();
        segments.push(SegmentReport {
            index: j,
            start: t0,
            end: t1,
            zeta,
            cost: out.cost.j,
            int_l1: out.cost.int_l1,
            int_l2: out.cost.int_l2,
            observability_index: trapezoid(&record.times, &record.density),
            unsaturated_reward: trapezoid(&record.times, &discount),
            iterations: trace.len(),
            status,
            final_grad_norm: trace.records.last().map(|r| r.grad_norm),
            trace,
            record: record.clone(),
        });
        trajectory.append(Trajectory {
            times: record.times,
            states: record.states,
            controls: Some(record.controls),
            outputs: None,
        });
        x = out.final_state.nominal;
        warm = k.clone();
        gains.push(k);
    }
    Ok(SynthesisResult {
        plan: plan.clone(),
        gains,
        segments,
        trajectory,
        initial_gain: initial,
    })
}

fn default_initial_gain(sys: &dyn ControlAffineSystem, spec: &CostSpec, x0: &[f64], opts: &SynthesisOptions) -> Result<DMatrix<f64>> {
    if let Some(k) = &opts.initial_gain {
        if k.shape() != (sys.input_dim(), sys.state_dim()) {
            return Err(Error::InvalidArgument("initial gain has the wrong shape".into()));
        }
        return Ok(k.clone());
    }
    let (a, b) = linearize(sys, x0)?;
    Ok(lqr_gain(&a, &b, &spec.q, &spec.r, None)?.k)
}

/// Optimizes one gain per segment, warm-starting each segment from the
/// previous optimum and re-seeding the perturbations at every boundary.
pub fn synthesize(sys: &dyn ControlAffineSystem, spec: &CostSpec, plan: &SegmentPlan, x0: &[f64], opts: &SynthesisOptions) -> Result<SynthesisResult> {
    check_inputs(sys, spec, x0)?;
    opts.optimizer.validate()?;
    let initial = default_initial_gain(sys, spec, x0, opts)?;
    segment_pass(sys, spec, plan, x0, opts, initial, |seg, z0, warm| {
        let res = optimize_segment(seg, z0, warm, &opts.optimizer)?;
        Ok((res.gain, Some(res.status), res.trace))
    })
}

/// The same pipeline with one fixed gain on every segment (by default the
/// LQR gain of the linearization at `x0`).
pub fn baseline(sys: &dyn ControlAffineSystem, spec: &CostSpec, plan: &SegmentPlan, x0: &[f64], opts: &SynthesisOptions) -> Result<SynthesisResult> {
    check_inputs(sys, spec, x0)?;
    let initial = default_initial_gain(sys, spec, x0, opts)?;
    segment_pass(sys, spec, plan, x0, opts, initial, |_seg, _z0, warm| Ok((warm.clone(), None, IterationTrace::default())))
}

/// Sampled Lyapunov candidate and its verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Segment index of each sample.
    pub segment: Vec<usize>,
    /// Largest increase between consecutive samples of one segment.
    pub max_increase: f64,
    pub min_value: f64,
    pub nonincreasing: bool,
    pub positive: bool,
}

impl LyapunovTrace {
    pub fn verdict(&self) -> bool {
        self.nonincreasing && self.positive
    }
}

/// `V(t) = ∫_t^{t+Δt}(l1 − l2 + b) dτ + 𝓛(t+Δt) + L(x(t+Δt))` with
/// `b = 𝓛 = ζ_j e^{−t}`, the anchor segment's `ζ_j`, and `Δt` the anchor
/// segment's length.
///
/// Only samples whose window ends by `t_f` are taken. Integrals of
/// `l1 − l2` use the recorded per-segment trapezoid sums; the `b` and `𝓛`
/// terms telescope to `ζ_j e^{−t}`.
pub fn lyapunov_trace(result: &SynthesisResult, spec: &CostSpec, tol: f64) -> LyapunovTrace {
    // Cumulative ∫(l1 − l2) per segment, continuous across boundaries.
    let mut cum: Vec<Vec<f64>> = Vec::with_capacity(result.segments.len());
    let mut base = 0.0;
    for s in &result.segments {
        let r = &s.record;
        let mut c = Vec::with_capacity(r.times.len());
        let mut acc = base;
        c.push(acc);
        for k in 1..r.times.len() {
            let h = r.times[k] - r.times[k - 1];
            acc += 0.5 * h * ((r.l1[k] - r.l2[k]) + (r.l1[k - 1] - r.l2[k - 1]));
            c.push(acc);
        }
        base = acc;
        cum.push(c);
    }
    let t_f = result.plan.horizon();
    let lookup = |tau: f64| -> Option<(f64, Vec<f64>)> {
        for (s, c) in result.segments.iter().zip(&cum) {
            if tau < s.start || tau > s.end {
                continue;
            }
            let times = &s.record.times;
            let idx = times.partition_point(|&t| t < tau - 1e-12);
            if idx < times.len() && (times[idx] - tau).abs() <= 1e-9 {
                return Some((c[idx], s.record.states[idx].clone()));
            }
            let i = idx.clamp(1, times.len() - 1);
            let w = (tau - times[i - 1]) / (times[i] - times[i - 1]);
            let x: Vec<f64> = s.record.states[i - 1]
                .iter()
                .zip(&s.record.states[i])
                .map(|(a, b)| a + w * (b - a))
                .collect();
            return Some((c[i - 1] + w * (c[i] - c[i - 1]), x));
        }
        None
    };
    let mut out = LyapunovTrace {
        times: Vec::new(),
        values: Vec::new(),
        segment: Vec::new(),
        max_increase: f64::NEG_INFINITY,
        min_value: f64::INFINITY,
        nonincreasing: true,
        positive: true,
    };
    for (j, (s, c)) in result.segments.iter().zip(&cum).enumerate() {
        let dt_window = s.end - s.start;
        let mut prev: Option<f64> = None;
        for (k, &t) in s.record.times.iter().enumerate() {
            let tau = t + dt_window;
            if tau > t_f + 1e-9 {
                break;
            }
            let Some((c_tau, x_tau)) = lookup(tau.min(t_f)) else {
                break;
            };
            let v = c_tau - c[k] + s.zeta * (-t).exp() + quad_form(&spec.qf, &x_tau);
            if let Some(p) = prev {
                let inc = v - p;
                out.max_increase = out.max_increase.max(inc);
                if inc > tol {
                    out.nonincreasing = false;
                }
            }
            if !(v > 0.0) {
                out.positive = false;
            }
            out.min_value = out.min_value.min(v);
            prev = Some(v);
            out.times.push(t);
            out.values.push(v);
            out.segment.push(j);
        }
    }
    if out.values.is_empty() {
        out.positive = false;
    }
    out
}

/// Largest per-segment rate `β̂ = max_t −ln(‖x(t)‖_Q / ‖x(t_j)‖_Q) / (t − t_j)`,
/// floored at 0. Segments are delimited by `boundaries`; segments starting
/// at the origin are skipped.
pub fn decay_rate_estimate(traj: &Trajectory, q: &DMatrix<f64>, boundaries: &[f64]) -> f64 {
    let mut beta = 0.0f64;
    let norm = |x: &[f64]| quad_form(q, x).max(0.0).sqrt();
    for w in boundaries.windows(2) {
        let (a, b) = (w[0], w[1]);
        let idx: Vec<usize> = (0..traj.len())
            .filter(|&i| traj.times[i] >= a - 1e-12 && traj.times[i] <= b + 1e-12)
            .collect();
        let Some(&first) = idx.first() else { continue };
        let n0 = norm(&traj.states[first]);
        if n0 <= 0.0 {
            continue;
        }
        for &i in &idx[1..] {
            let dt = traj.times[i] - traj.times[first];
            if dt <= 0.0 {
                continue;
            }
            let ni = norm(&traj.states[i]);
            let rate = if ni > 0.0 { -(ni / n0).ln() / dt } else { f64::INFINITY };
            beta = beta.max(rate);
        }
    }
    beta
}

/// Smallest `xᵀQx − l2` over all recorded samples.
pub fn lemma1_margin(result: &SynthesisResult, spec: &CostSpec) -> f64 {
    result
        .segments
        .iter()
        .flat_map(|s| s.record.states.iter().zip(&s.record.l2).map(|(x, l2)| quad_form(&spec.q, x) - l2))
        .fold(f64::INFINITY, f64::min)
}

/// Largest `L̇ + l1` along the recorded trajectory; nonpositive values
/// mean the terminal cost acts as a control Lyapunov function.
pub fn terminal_decrease_residual(sys: &dyn ControlAffineSystem, result: &SynthesisResult, spec: &CostSpec) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for s in &result.segments {
        for ((x, u), l1) in s.record.states.iter().zip(&s.record.controls).zip(&s.record.l1) {
            let f = crate::model::eval_dynamics(sys, x, u)?;
            let qfx = &spec.qf * nalgebra::DVector::from_column_slice(x);
            let l_dot: f64 = 2.0 * qfx.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
            worst = worst.max(l_dot + l1);
        }
    }
    Ok(worst)
}

/// `ζ` policy derived from a known decay-rate bound `β`.
pub fn decay_rule(beta: f64) -> ZetaPolicy {
    ZetaPolicy::DecayRule { beta }
}
