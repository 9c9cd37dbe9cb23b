//! Augmented-state integration and gain sensitivities for one segment.
//!
//! The augmented state stacks the nominal state, the `2n` perturbed states
//! `x^{±i}` (ordered `+1, −1, +2, −2, …`) and the running cost. All state
//! blocks and their gain sensitivities are advanced by RK4 on a common grid,
//! so the gradient is the exact derivative of the discretized cost. The cost
//! row accumulates `Γ` by trapezoid quadrature on that grid (the same rule the
//! Gramian uses) plus the exact increment of `L`, which is `∫ L̇`.

use nalgebra::DMatrix;

use crate::cost::{observability_density, reward_bound, sat, sat_derivative, CostSpec};
use crate::error::{check_len, Error, Result};
use crate::gramian::perturbed_initial_conditions;
use crate::linalg::quad_form;
use crate::model::{apply_row_major, eval_dynamics_into, ControlAffineSystem, GainMatrix};
use crate::ode::{time_grid, IntegratorConfig, Rk4};
use crate::par::{self, Execution};

/// How the Jacobians of the augmented dynamics are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    /// The system's own derivative hooks (symbolic for expression systems,
    /// closed form for built-ins, finite differences for plain closures).
    #[default]
    Analytic,
    /// Central differences with step `1e-6·(1 + |component|)`.
    FiniteDifference,
}

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub nominal: Vec<f64>,
    pub perturbed: Vec<Vec<f64>>,
    pub running_cost: f64,
}

impl AugmentedState {
    /// Segment-start state: `x_j`, `x_j ± ε e_i`, and `L(x_j)`.
    pub fn initial(x_j: &[f64], spec: &CostSpec) -> Result<Self> {
        check_len("segment start", spec.state_dim(), x_j)?;
        Ok(Self {
            nominal: x_j.to_vec(),
            perturbed: perturbed_initial_conditions(x_j, spec.epsilon)?,
            running_cost: quad_form(&spec.qf, x_j),
        })
    }

    pub fn dim(n: usize) -> usize {
        n * (2 * n + 1) + 1
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.nominal.clone();
        for p in &self.perturbed {
            v.extend_from_slice(p);
        }
        v.push(self.running_cost);
        v
    }

    pub fn from_slice(n: usize, z: &[f64]) -> Result<Self> {
        check_len("augmented state", Self::dim(n), z)?;
        Ok(Self {
            nominal: z[..n].to_vec(),
            perturbed: z[n..n * (2 * n + 1)].chunks(n).map(<[f64]>::to_vec).collect(),
            running_cost: z[n * (2 * n + 1)],
        })
    }
}

/// `∂x̄/∂K`: `n(2n+1)+1` rows, one column per gain entry (row-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBlock(pub DMatrix<f64>);

impl SensitivityBlock {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self(DMatrix::zeros(AugmentedState::dim(n), p * n))
    }

    /// The running-cost row.
    pub fn cost_row(&self) -> Vec<f64> {
        let r = self.0.nrows() - 1;
        self.0.row(r).iter().copied().collect()
    }
}

/// One segment's optimization problem: system, weights, saturation level,
/// interval and integration settings.
#[derive(Clone, Copy)]
pub struct Segment<'a> {
    pub sys: &'a dyn ControlAffineSystem,
    pub spec: &'a CostSpec,
    pub zeta: f64,
    pub t0: f64,
    pub t1: f64,
    pub cfg: IntegratorConfig,
    pub mode: JacobianMode,
}

impl std::fmt::Debug for Segment<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Segment")
            .field("system", &self.sys.name())
            .field("zeta", &self.zeta)
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .field("dt", &self.cfg.dt)
            .field("mode", &self.mode)
            .finish()
    }
}

impl<'a> Segment<'a> {
    pub fn new(sys: &'a dyn ControlAffineSystem, spec: &'a CostSpec, zeta: f64, t0: f64, t1: f64, cfg: IntegratorConfig) -> Result<Self> {
        if sys.state_dim() != spec.state_dim() || sys.input_dim() != spec.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "cost weights are {}x{} / {}x{} but the system has n = {}, p = {}",
                spec.state_dim(),
                spec.state_dim(),
                spec.input_dim(),
                spec.input_dim(),
                sys.state_dim(),
                sys.input_dim()
            )));
        }
        if !(t0 < t1) {
            return Err(Error::InvalidArgument(format!("segment [{t0}, {t1}) is empty")));
        }
        if !(zeta >= 0.0) || !zeta.is_finite() {
            return Err(Error::InvalidArgument(format!("saturation level must be nonnegative, got {zeta}")));
        }
        Ok(Self {
            sys,
            spec,
            zeta,
            t0,
            t1,
            cfg,
            mode: JacobianMode::Analytic,
        })
    }

    pub fn with_mode(mut self, mode: JacobianMode) -> Self {
        self.mode = mode;
        self
    }

    fn n(&self) -> usize {
        self.sys.state_dim()
    }

    fn p(&self) -> usize {
        self.sys.input_dim()
    }

    fn theta(&self, k: &GainMatrix) -> Result<Vec<f64>> {
        if k.rows() != self.p() || k.cols() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "gain is {}x{}, expected {}x{}",
                k.rows(),
                k.cols(),
                self.p(),
                self.n()
            )));
        }
        Ok(k.to_row_major())
    }
}

/// Integrals of the cost components over a segment, all on the same grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    /// Segment cost `J = ∫Γ + L(x(t_{j+1}))`.
    pub j: f64,
    pub int_l1: f64,
    pub int_l2: f64,
    /// `∫ ζ e^{−t}`, the integrated reward bound.
    pub int_bound: f64,
    pub terminal: f64,
}

/// Per-grid-point values along the nominal trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    /// Observability density before saturation.
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutcome {
    pub final_state: AugmentedState,
    pub cost: CostBreakdown,
    pub gradient: Option<Vec<f64>>,
    pub record: Option<SegmentRecord>,
}

fn closed_loop(sys: &dyn ControlAffineSystem, theta: &[f64], x: &[f64], u: &mut [f64], out: &mut [f64]) -> Result<()> {
    apply_row_major(theta, u.len(), x.len(), x, u, false);
    eval_dynamics_into(sys, x, u, out)
}

/// Closed-loop Jacobians of one block: `A = ∂f/∂x` (n×n) and
/// `B = ∂f/∂θ` (n×pn), both row-major.
fn block_jacobians(seg: &Segment, theta: &[f64], x: &[f64], a: &mut [f64], b: &mut [f64]) -> Result<()> {
    let (n, p) = (seg.n(), seg.p());
    let pn = p * n;
    match seg.mode {
        JacobianMode::Analytic => {
            let mut u = vec![0.0; p];
            apply_row_major(theta, p, n, x, &mut u, false);
            seg.sys.dynamics_jacobian(x, &u, a)?;
            let mut g = vec![0.0; n * p];
            seg.sys.control_matrix(x, &mut g)?;
            for i in 0..n {
                for c in 0..n {
                    let mut acc = 0.0;
                    for r in 0..p {
                        acc += g[i * p + r] * theta[r * n + c];
                    }
                    a[i * n + c] += acc;
                }
                for r in 0..p {
                    for c in 0..n {
                        b[i * pn + r * n + c] = g[i * p + r] * x[c];
                    }
                }
            }
        }
        JacobianMode::FiniteDifference => {
            let mut u = vec![0.0; p];
            let mut fp = vec![0.0; n];
            let mut fm = vec![0.0; n];
            let mut xs = x.to_vec();
            for c in 0..n {
                let h = FD_STEP * (1.0 + x[c].abs());
                xs[c] = x[c] + h;
                closed_loop(seg.sys, theta, &xs, &mut u, &mut fp)?;
                xs[c] = x[c] - h;
                closed_loop(seg.sys, theta, &xs, &mut u, &mut fm)?;
                xs[c] = x[c];
                for i in 0..n {
                    a[i * n + c] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
            let mut th = theta.to_vec();
            for q in 0..pn {
                let h = FD_STEP * (1.0 + theta[q].abs());
                th[q] = theta[q] + h;
                closed_loop(seg.sys, &th, x, &mut u, &mut fp)?;
                th[q] = theta[q] - h;
                closed_loop(seg.sys, &th, x, &mut u, &mut fm)?;
                th[q] = theta[q];
                for i in 0..n {
                    b[i * pn + q] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
        }
    }
    Ok(())
}

/// Values of the running-cost pieces at one instant.
struct GammaParts {
    l1: f64,
    l2: f64,
    density: f64,
}

fn gamma_parts(seg: &Segment, t: f64, theta: &[f64], zs: &[f64]) -> Result<GammaParts> {
    let (n, p) = (seg.n(), seg.p());
    let x = &zs[..n];
    let mut u = vec![0.0; p];
    apply_row_major(theta, p, n, x, &mut u, false);
    let l1 = quad_form(&seg.spec.q, x) + quad_form(&seg.spec.r, &u);
    let mut outs = Vec::with_capacity(2 * n);
    let mut y = vec![0.0; seg.sys.output_dim()];
    for blk in 1..=2 * n {
        output_checked(seg.sys, &zs[blk * n..(blk + 1) * n], &mut y)?;
        outs.push(y.clone());
    }
    let density = observability_density(&outs, seg.spec.epsilon);
    Ok(GammaParts {
        l1,
        l2: (-t).exp() * sat(density, seg.zeta),
        density,
    })
}

fn output_checked(sys: &dyn ControlAffineSystem, x: &[f64], y: &mut [f64]) -> Result<()> {
    sys.output(x, y)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutputDomain {
            x: x.to_vec(),
            reason: "non-finite output".into(),
        });
    }
    Ok(())
}

fn gamma_value(seg: &Segment, t: f64, theta: &[f64], zs: &[f64]) -> Result<f64> {
    let g = gamma_parts(seg, t, theta, zs)?;
    Ok(g.l1 - g.l2)
}

/// `∂Γ/∂z` over the state rows (length `n(2n+1)`) and `∂Γ/∂θ`.
fn gamma_gradient(seg: &Segment, t: f64, theta: &[f64], zs: &[f64], gz: &mut [f64], gth: &mut [f64]) -> Result<()> {
    let (n, p) = (seg.n(), seg.p());
    match seg.mode {
        JacobianMode::Analytic => {
            let x = &zs[..n];
            let mut u = vec![0.0; p];
            apply_row_major(theta, p, n, x, &mut u, false);
            let ru = &seg.spec.r * nalgebra::DVector::from_column_slice(&u);
            let qx = &seg.spec.q * nalgebra::DVector::from_column_slice(x);
            gz.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..n {
                let mut ktru = 0.0;
                for r in 0..p {
                    ktru += theta[r * n + c] * ru[r];
                }
                gz[c] = 2.0 * (qx[c] + ktru);
            }
            for r in 0..p {
                for c in 0..n {
                    gth[r * n + c] = 2.0 * ru[r] * x[c];
                }
            }
            let m = seg.sys.output_dim();
            let mut outs = vec![vec![0.0; m]; 2 * n];
            for (blk, y) in outs.iter_mut().enumerate() {
                output_checked(seg.sys, &zs[(blk + 1) * n..(blk + 2) * n], y)?;
            }
            let density = observability_density(&outs, seg.spec.epsilon);
            if sat_derivative(density, seg.zeta) == 0.0 {
                return Ok(());
            }
            let scale = -(-t).exp() * 2.0 / (4.0 * seg.spec.epsilon * seg.spec.epsilon);
            let mut jac = vec![0.0; m * n];
            for i in 0..n {
                let d: Vec<f64> = outs[2 * i].iter().zip(&outs[2 * i + 1]).map(|(a, b)| a - b).collect();
                for (s, sign) in [(2 * i, 1.0), (2 * i + 1, -1.0)] {
                    let xs = &zs[(s + 1) * n..(s + 2) * n];
                    seg.sys.output_jacobian(xs, &mut jac)?;
                    for c in 0..n {
                        let mut acc = 0.0;
                        for r in 0..m {
                            acc += jac[r * n + c] * d[r];
                        }
                        gz[(s + 1) * n + c] = scale * sign * acc;
                    }
                }
            }
        }
        JacobianMode::FiniteDifference => {
            let mut z = zs.to_vec();
            for c in 0..zs.len() {
                let h = FD_STEP * (1.0 + zs[c].abs());
                z[c] = zs[c] + h;
                let fp = gamma_value(seg, t, theta, &z)?;
                z[c] = zs[c] - h;
                let fm = gamma_value(seg, t, theta, &z)?;
                z[c] = zs[c];
                gz[c] = (fp - fm) / (2.0 * h);
            }
            let mut th = theta.to_vec();
            for q in 0..theta.len() {
                let h = FD_STEP * (1.0 + theta[q].abs());
                th[q] = theta[q] + h;
                let fp = gamma_value(seg, t, &th, zs)?;
                th[q] = theta[q] - h;
                let fm = gamma_value(seg, t, &th, zs)?;
                th[q] = theta[q];
                gth[q] = (fp - fm) / (2.0 * h);
            }
        }
    }
    Ok(())
}

/// Augmented dynamics `ℍ(t, x̄, K)`: the closed-loop field for every state
/// block and `Γ + L̇` for the running cost.
pub fn build_h(seg: &Segment, k: &GainMatrix, t: f64, z: &AugmentedState) -> Result<Vec<f64>> {
    let theta = seg.theta(k)?;
    let n = seg.n();
    let zv = z.to_vec();
    check_len("augmented state", AugmentedState::dim(n), &zv)?;
    let ns = n * (2 * n + 1);
    let mut out = vec![0.0; ns + 1];
    let mut u = vec![0.0; seg.p()];
    for blk in 0..2 * n + 1 {
        closed_loop(seg.sys, &theta, &zv[blk * n..(blk + 1) * n], &mut u, &mut out[blk * n..(blk + 1) * n])?;
    }
    let x = &zv[..n];
    let qfx = &seg.spec.qf * nalgebra::DVector::from_column_slice(x);
    let l_dot: f64 = 2.0 * (0..n).map(|i| qfx[i] * out[i]).sum::<f64>();
    out[ns] = gamma_value(seg, t, &theta, &zv[..ns])? + l_dot;
    Ok(out)
}

/// `dX̄/dt = (∂ℍ/∂x̄) X̄ + ∂ℍ/∂K`.
pub fn sensitivity_rhs(seg: &Segment, k: &GainMatrix, t: f64, z: &AugmentedState, xbar: &SensitivityBlock) -> Result<SensitivityBlock> {
    let theta = seg.theta(k)?;
    let (n, p) = (seg.n(), seg.p());
    let pn = p * n;
    let ns = n * (2 * n + 1);
    let zv = z.to_vec();
    check_len("augmented state", ns + 1, &zv)?;
    let s = &xbar.0;
    if s.nrows() != ns + 1 || s.ncols() != pn {
        return Err(Error::dim("sensitivity block", (ns + 1) * pn, s.nrows() * s.ncols()));
    }
    let mut out = DMatrix::zeros(ns + 1, pn);
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * pn];
    let mut a0 = vec![0.0; n * n];
    let mut b0 = vec![0.0; n * pn];
    for blk in 0..2 * n + 1 {
        let x = &zv[blk * n..(blk + 1) * n];
        block_jacobians(seg, &theta, x, &mut a, &mut b)?;
        if blk == 0 {
            a0.copy_from_slice(&a);
            b0.copy_from_slice(&b);
        }
        for i in 0..n {
            for q in 0..pn {
                let mut acc = b[i * pn + q];
                for c in 0..n {
                    acc += a[i * n + c] * s[(blk * n + c, q)];
                }
                out[(blk * n + i, q)] = acc;
            }
        }
    }
    // Running-cost row: ∂Γ and ∂L̇ with L̇ = 2 xᵀQf f(x, Kx).
    let mut gz = vec![0.0; ns];
    let mut gth = vec![0.0; pn];
    gamma_gradient(seg, t, &theta, &zv[..ns], &mut gz, &mut gth)?;
    let x = &zv[..n];
    let mut f = vec![0.0; n];
    let mut u = vec![0.0; p];
    closed_loop(seg.sys, &theta, x, &mut u, &mut f)?;
    let qf = &seg.spec.qf;
    let qfx = qf * nalgebra::DVector::from_column_slice(x);
    let qff = qf * nalgebra::DVector::from_column_slice(&f);
    for c in 0..n {
        let mut atq = 0.0;
        for i in 0..n {
            atq += a0[i * n + c] * qfx[i];
        }
        gz[c] += 2.0 * (qff[c] + atq);
    }
    for q in 0..pn {
        let mut acc = 0.0;
        for i in 0..n {
            acc += qfx[i] * b0[i * pn + q];
        }
        gth[q] += 2.0 * acc;
    }
    for q in 0..pn {
        let mut acc = gth[q];
        for r in 0..ns {
            acc += gz[r] * s[(r, q)];
        }
        out[(ns, q)] = acc;
    }
    Ok(SensitivityBlock(out))
}

/// Integrates the augmented state over the segment, optionally with gain
/// sensitivities and a per-grid record of the nominal trajectory.
pub fn run_segment(seg: &Segment, k: &GainMatrix, z0: &AugmentedState, with_gradient: bool, record: bool) -> Result<SegmentOutcome> {
    let theta = seg.theta(k)?;
    let (n, p) = (seg.n(), seg.p());
    let pn = p * n;
    let nb = 2 * n + 1;
    let ns = n * nb;
    let z0v = z0.to_vec();
    check_len("augmented state", ns + 1, &z0v)?;
    if z0v.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { time: seg.t0 });
    }
    let dim = if with_gradient { ns + ns * pn } else { ns };
    let mut y = vec![0.0; dim];
    y[..ns].copy_from_slice(&z0v[..ns]);

    let mut u = vec![0.0; p];
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * pn];
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        for blk in 0..nb {
            let x = &y[blk * n..(blk + 1) * n];
            closed_loop(seg.sys, &theta, x, &mut u, &mut dy[blk * n..(blk + 1) * n])?;
            if with_gradient {
                block_jacobians(seg, &theta, x, &mut a, &mut b)?;
                let s = &y[ns + blk * n * pn..ns + (blk + 1) * n * pn];
                let ds = &mut dy[ns + blk * n * pn..ns + (blk + 1) * n * pn];
                for i in 0..n {
                    for q in 0..pn {
                        let mut acc = b[i * pn + q];
                        for c in 0..n {
                            acc += a[i * n + c] * s[c * pn + q];
                        }
                        ds[i * pn + q] = acc;
                    }
                }
            }
        }
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("augmented dynamics"));
        }
        Ok(())
    };

    let grid = time_grid(seg.t0, seg.t1, seg.cfg.dt);
    let mut rk = Rk4::new(dim);
    let mut rec = record.then(SegmentRecord::default);
    let mut gz = vec![0.0; ns];
    let mut gth = vec![0.0; pn];
    let mut grad = vec![0.0; if with_gradient { pn } else { 0 }];

    // Per-point integrand values and gradient contributions.
    let mut sample = |t: f64, y: &[f64], rec: &mut Option<SegmentRecord>, dgrad: &mut [f64]| -> Result<(f64, f64)> {
        let parts = gamma_parts(seg, t, &theta, &y[..ns])?;
        if with_gradient {
            gamma_gradient(seg, t, &theta, &y[..ns], &mut gz, &mut gth)?;
            for q in 0..pn {
                let mut acc = gth[q];
                for r in 0..ns {
                    acc += gz[r] * y[ns + r * pn + q];
                }
                dgrad[q] = acc;
            }
        }
        if let Some(r) = rec.as_mut() {
            let x = &y[..n];
            let mut uu = vec![0.0; p];
            apply_row_major(&theta, p, n, x, &mut uu, false);
            r.times.push(t);
            r.states.push(x.to_vec());
            r.controls.push(uu);
            r.l1.push(parts.l1);
            r.l2.push(parts.l2);
            r.density.push(parts.density);
        }
        Ok((parts.l1, parts.l2))
    };

    let mut d_prev = vec![0.0; grad.len()];
    let mut d_next = vec![0.0; grad.len()];
    let (mut l1_prev, mut l2_prev) = sample(grid[0], &y, &mut rec, &mut d_prev)?;
    let (mut int_l1, mut int_l2, mut int_bound) = (0.0, 0.0, 0.0);
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let h = t_next - t;
        rk.step(&mut rhs, t, &mut y, h).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { time: t_next },
            other => other,
        })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t_next });
        }
        let (l1_next, l2_next) = sample(t_next, &y, &mut rec, &mut d_next)?;
        int_l1 += 0.5 * h * (l1_prev + l1_next);
        int_l2 += 0.5 * h * (l2_prev + l2_next);
        int_bound += 0.5 * h * (reward_bound(t, seg.zeta) + reward_bound(t_next, seg.zeta));
        for q in 0..grad.len() {
            grad[q] += 0.5 * h * (d_prev[q] + d_next[q]);
        }
        std::mem::swap(&mut d_prev, &mut d_next);
        l1_prev = l1_next;
        l2_prev = l2_next;
    }

    let x_end = &y[..n];
    let terminal = quad_form(&seg.spec.qf, x_end);
    let l_start = quad_form(&seg.spec.qf, &z0v[..n]);
    let running = z0.running_cost + (int_l1 - int_l2) + (terminal - l_start);
    if with_gradient {
        let qfx = &seg.spec.qf * nalgebra::DVector::from_column_slice(x_end);
        for q in 0..pn {
            let mut acc = 0.0;
            for c in 0..n {
                acc += 2.0 * qfx[c] * y[ns + c * pn + q];
            }
            grad[q] += acc;
        }
    }
    let mut zf = y[..ns].to_vec();
    zf.push(running);
    Ok(SegmentOutcome {
        final_state: AugmentedState::from_slice(n, &zf)?,
        cost: CostBreakdown {
            j: running,
            int_l1,
            int_l2,
            int_bound,
            terminal,
        },
        gradient: with_gradient.then_some(grad),
        record: rec,
    })
}

/// Final augmented state and the segment cost `J`.
pub fn integrate_augmented(seg: &Segment, k: &GainMatrix, z0: &AugmentedState) -> Result<(AugmentedState, f64)> {
    let out = run_segment(seg, k, z0, false, false)?;
    Ok((out.final_state, out.cost.j))
}

/// `∂J/∂K` flattened row-major, from the running-cost row of the
/// co-integrated sensitivities.
pub fn gradient(seg: &Segment, k: &GainMatrix, z0: &AugmentedState) -> Result<Vec<f64>> {
    Ok(run_segment(seg, k, z0, true, false)?.gradient.expect("gradient requested"))
}

/// Cost and gradient in one pass.
pub fn cost_and_gradient(seg: &Segment, k: &GainMatrix, z0: &AugmentedState) -> Result<(CostBreakdown, Vec<f64>)> {
    let out = run_segment(seg, k, z0, true, false)?;
    Ok((out.cost, out.gradient.expect("gradient requested")))
}

/// Central finite difference of `J` over each gain entry with absolute
/// step `delta`; entries run according to `exec`.
pub fn fd_gradient(seg: &Segment, k: &GainMatrix, z0: &AugmentedState, delta: f64, exec: Execution) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {delta}")));
    }
    let theta = seg.theta(k)?;
    par::try_map_indexed(exec, theta.len(), |q| {
        let mut th = theta.clone();
        th[q] = theta[q] + delta;
        let jp = integrate_augmented(seg, &k.with_entries_row_major(&th)?, z0)?.1;
        th[q] = theta[q] - delta;
        let jm = integrate_augmented(seg, &k.with_entries_row_major(&th)?, z0)?.1;
        Ok((jp - jm) / (2.0 * delta))
    })
}
