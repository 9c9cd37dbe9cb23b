//! Diminishing-step gradient descent over one segment's gain.
//!
//! Each iteration co-integrates the augmented state and its sensitivities,
//! steps `K ← K − μ g`, and estimates curvature with an elementwise secant
//! matrix. The step size advances along `μ0 / i` only while the secant
//! matrix is positive semidefinite; termination needs both a small gradient
//! and a passing curvature check.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, norm2, symmetrize};
use crate::model::GainMatrix;
use crate::par::{self, Execution};
use crate::sensitivity::{cost_and_gradient, run_segment, AugmentedState, CostBreakdown, Segment};

/// Denominators below this magnitude give a zero secant entry.
pub const SECANT_GUARD: f64 = 1e-12;
/// Maximum number of step halvings after a failed candidate.
pub const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub mu0: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub psd_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            mu0: 0.1,
            grad_tol: 1e-4,
            max_iters: 200,
            psd_tol: 1e-9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) || !self.mu0.is_finite() {
            return Err(Error::InvalidArgument(format!("optimizer.mu0 must be positive, got {}", self.mu0)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument(format!("optimizer.grad_tol must be positive, got {}", self.grad_tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("optimizer.max_iters must be at least 1".into()));
        }
        if !(self.psd_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("optimizer.psd_tol must be nonnegative, got {}", self.psd_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    IterationCapped,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::IterationCapped => "iteration-capped",
        }
    }
}

/// Lower and upper brackets of a segment cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBounds {
    pub j: f64,
    /// `∫(l1 − ζ) dt + L`.
    pub lower: f64,
    /// `∫(l1 − ζ e^{−t}) dt + L`.
    pub refined_lower: f64,
    /// `∫ l1 dt + L`.
    pub upper: f64,
}

impl CostBounds {
    pub fn from_breakdown(c: &CostBreakdown, zeta: f64, length: f64) -> Self {
        Self {
            j: c.j,
            lower: c.int_l1 - zeta * length + c.terminal,
            refined_lower: c.int_l1 - c.int_bound + c.terminal,
            upper: c.int_l1 + c.terminal,
        }
    }

    /// `lower ≤ J ≤ upper` within `rel_tol` of the magnitudes involved.
    pub fn holds(&self, rel_tol: f64) -> bool {
        let tol = rel_tol * self.j.abs().max(self.upper.abs()).max(1.0);
        self.lower <= self.j + tol && self.j <= self.upper + tol && self.refined_lower <= self.j + tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Gain entries, row-major.
    pub gain: Vec<f64>,
    pub cost: f64,
    pub grad_norm: f64,
    /// Scheduled step size `μ0 / s` at this iteration.
    pub mu: f64,
    pub schedule_index: usize,
    /// Step actually taken from this iterate (after halvings); `None` when
    /// the run stopped here.
    pub step_taken: Option<f64>,
    pub halvings: usize,
    pub cvx_check: bool,
    pub bounds: CostBounds,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Running minimum of the cost.
    pub fn best_costs(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.cost);
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub gain: GainMatrix,
    pub cost: f64,
    pub status: Status,
    pub trace: IterationTrace,
}

/// `μ_i = μ0 / i`.
pub fn step_size(i: usize, mu0: f64) -> f64 {
    assert!(i >= 1, "step index starts at 1");
    mu0 / i as f64
}

/// `H[m][n] = Δg[m] / ΔK[n]` with guarded denominators.
pub fn secant_hessian(g_new: &[f64], g_old: &[f64], k_new: &[f64], k_old: &[f64]) -> DMatrix<f64> {
    let d = g_new.len();
    DMatrix::from_fn(d, d, |m, n| {
        let dk = k_new[n] - k_old[n];
        if dk.abs() < SECANT_GUARD {
            return 0.0;
        }
        let h = (g_new[m] - g_old[m]) / dk;
        if h.is_finite() {
            h
        } else {
            0.0
        }
    })
}

/// Minimum eigenvalue of the symmetrized matrix is at least `−psd_tol`.
pub fn psd_check(h: &DMatrix<f64>, psd_tol: f64) -> bool {
    if h.nrows() == 0 {
        return true;
    }
    min_sym_eigenvalue(&symmetrize(h)) >= -psd_tol
}

/// `J` together with its brackets for one gain.
pub fn cost_bounds(seg: &Segment, k: &GainMatrix, z0: &AugmentedState) -> Result<CostBounds> {
    let out = run_segment(seg, k, z0, false, false)?;
    Ok(CostBounds::from_breakdown(&out.cost, seg.zeta, seg.t1 - seg.t0))
}

/// Segment costs for a batch of candidate gains.
pub fn evaluate_gains(seg: &Segment, gains: &[GainMatrix], z0: &AugmentedState, exec: Execution) -> Vec<Result<f64>> {
    par::map_indexed(exec, gains.len(), |i| run_segment(seg, &gains[i], z0, false, false).map(|o| o.cost.j))
}

/// Minimizes the segment cost from `k_init`.
pub fn optimize_segment(seg: &Segment, z0: &AugmentedState, k_init: &GainMatrix, cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    cfg.validate()?;
    let zeta = seg.zeta;
    let length = seg.t1 - seg.t0;
    let mut k = k_init.clone();
    let mut theta = k.to_row_major();
    let (mut cost, mut g) = cost_and_gradient(seg, &k, z0)?;
    let mut schedule = 1usize;
    let mut cvx = true;
    let mut trace = IterationTrace::default();
    let mut best = (cost.j, k.clone());

    for iteration in 1..=cfg.max_iters {
        let grad_norm = norm2(&g);
        let mu = step_size(schedule, cfg.mu0);
        let mut record = IterationRecord {
            iteration,
            gain: theta.clone(),
            cost: cost.j,
            grad_norm,
            mu,
            schedule_index: schedule,
            step_taken: None,
            halvings: 0,
            cvx_check: cvx,
            bounds: CostBounds::from_breakdown(&cost, zeta, length),
        };
        if cost.j < best.0 {
            best = (cost.j, k.clone());
        }
        if grad_norm <= cfg.grad_tol && cvx {
            trace.records.push(record);
            return Ok(OptimizeResult {
                gain: k,
                cost: cost.j,
                status: Status::Converged,
                trace,
            });
        }
        if iteration == cfg.max_iters {
            trace.records.push(record);
            break;
        }

        let mut step = mu;
        let mut halvings = 0;
        let (k_new, theta_new, cost_new, g_new) = loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let attempt = k
                .with_entries_row_major(&cand)
                .and_then(|kc| cost_and_gradient(seg, &kc, z0).map(|(c, gn)| (kc, c, gn)));
            match attempt {
                Ok((kc, c, gn)) => break (kc, cand, c, gn),
                Err(e) if e.is_numerical() || matches!(e, Error::InvalidArgument(_)) => {
                    if halvings == MAX_HALVINGS {
                        return Err(Error::StepRecovery {
                            attempts: halvings,
                            last: Box::new(e),
                        });
                    }
                    halvings += 1;
                    step *= 0.5;
                }
                Err(e) => return Err(e),
            }
        };
        record.step_taken = Some(step);
        record.halvings = halvings;
        trace.records.push(record);

        let h = secant_hessian(&g_new, &g, &theta_new, &theta);
        cvx = psd_check(&h, cfg.psd_tol);
        if cvx {
            schedule += 1;
        }
        k = k_new;
        theta = theta_new;
        cost = cost_new;
        g = g_new;
    }
    Ok(OptimizeResult {
        gain: best.1,
        cost: best.0,
        status: Status::IterationCapped,
        trace,
    })
}
