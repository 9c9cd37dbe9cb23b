//! Empirical and linear observability Gramians.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::{expm, singular_values, sym_eigenvalues, symmetrize};
use crate::model::{simulate_policy, ControlAffineSystem, Policy};
use crate::ode::IntegratorConfig;
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct GramianResult {
    pub w: DMatrix<f64>,
    pub epsilon: f64,
    pub horizon: f64,
    /// `(1/4ε²) ∫ Σ_i ‖h(x^{+i}) − h(x^{−i})‖² dt`, accumulated separately
    /// from the matrix entries.
    pub trace_index: f64,
}

impl GramianResult {
    /// Wraps a precomputed matrix; the trace index is the matrix trace.
    pub fn from_matrix(w: DMatrix<f64>, epsilon: f64, horizon: f64) -> Self {
        let trace_index = w.trace();
        Self {
            w,
            epsilon,
            horizon,
            trace_index,
        }
    }

    /// Descending singular values.
    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.w)
    }

    /// `σ_min / σ_max`, or 0 for a zero Gramian.
    pub fn condition_ratio(&self) -> f64 {
        let sv = self.singular_values();
        match (sv.first(), sv.last()) {
            (Some(&max), Some(&min)) if max > 0.0 => min / max,
            _ => 0.0,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eigenvalues(&self.w).first().copied().unwrap_or(0.0)
    }

    pub fn determinant(&self) -> f64 {
        self.w.determinant()
    }

    /// `None` when the Gramian is singular.
    pub fn trace_of_inverse(&self) -> Option<f64> {
        self.w.clone().try_inverse().map(|inv| inv.trace())
    }

    pub fn is_psd(&self) -> bool {
        let scale = self.w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        self.min_eigenvalue() >= -1e-10 * scale
    }
}

/// `x0 ± ε e_i` in the order `+1, −1, +2, −2, …`.
pub fn perturbed_initial_conditions(x0: &[f64], epsilon: f64) -> Result<Vec<Vec<f64>>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("perturbation must be positive, got {epsilon}")));
    }
    let mut out = Vec::with_capacity(2 * x0.len());
    for i in 0..x0.len() {
        for sign in [1.0, -1.0] {
            let mut x = x0.to_vec();
            x[i] += sign * epsilon;
            out.push(x);
        }
    }
    Ok(out)
}

/// Trapezoid weights for a grid.
pub(crate) fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; times.len()];
    for k in 0..times.len().saturating_sub(1) {
        let h = times[k + 1] - times[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// Empirical observability Gramian over `[0, t_f]`.
///
/// Every perturbed trajectory runs under the same `policy`; with a feedback
/// policy that means `u = K x^{±i}`, not the nominal control signal. The
/// `2n` simulations are independent and run according to `exec`.
pub fn empirical_gramian(
    sys: &dyn ControlAffineSystem,
    policy: &Policy,
    x0: &[f64],
    epsilon: f64,
    t_f: f64,
    cfg: &IntegratorConfig,
    exec: Execution,
) -> Result<GramianResult> {
    let n = sys.state_dim();
    check_len("initial state", n, x0)?;
    if !(t_f > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_f}")));
    }
    let starts = perturbed_initial_conditions(x0, epsilon)?;
    let runs = par::try_map_indexed(exec, starts.len(), |k| simulate_policy(sys, policy, &starts[k], 0.0, t_f, cfg))?;
    let times = &runs[0].times;
    if runs.iter().any(|r| r.times.len() != times.len()) {
        return Err(Error::InvalidArgument("perturbed trajectories disagree on the time grid".into()));
    }
    let weights = trapezoid_weights(times);
    let m = sys.output_dim();
    let scale = 1.0 / (4.0 * epsilon * epsilon);
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut trace_index = 0.0;
    let mut diffs = vec![vec![0.0; m]; n];
    for (k, &wk) in weights.iter().enumerate() {
        for (i, d) in diffs.iter_mut().enumerate() {
            let yp = &runs[2 * i].outputs.as_ref().expect("outputs attached")[k];
            let ym = &runs[2 * i + 1].outputs.as_ref().expect("outputs attached")[k];
            for r in 0..m {
                d[r] = yp[r] - ym[r];
            }
            trace_index += wk * d.iter().map(|v| v * v).sum::<f64>();
        }
        for i in 0..n {
            for j in i..n {
                let dot: f64 = diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum();
                w[(i, j)] += wk * dot;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            w[(i, j)] = w[(j, i)];
        }
    }
    let w = symmetrize(&(w * scale));
    Ok(GramianResult {
        w,
        epsilon,
        horizon: t_f,
        trace_index: trace_index * scale,
    })
}

pub fn trace_index(g: &GramianResult) -> f64 {
    g.trace_index
}

/// Linear Gramian `∫_0^{t_f} e^{Aᵀt} CᵀC e^{At} dt` by composite Simpson
/// quadrature on 4000 panels, with every exponential evaluated directly.
pub fn linear_gramian(a: &DMatrix<f64>, c: &DMatrix<f64>, t_f: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n {
        return Err(Error::InvalidArgument("linear_gramian: inconsistent A/C shapes".into()));
    }
    if !(t_f > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t_f}")));
    }
    const PANELS: usize = 4000;
    let h = t_f / PANELS as f64;
    let ctc = c.transpose() * c;
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for k in 0..=PANELS {
        let e = expm(&(a * (k as f64 * h)));
        let f = e.transpose() * &ctc * &e;
        let wgt = if k == 0 || k == PANELS {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += f * wgt;
    }
    Ok(symmetrize(&(acc * (h / 3.0))))
}

/// Determinant of the first two rows of the observability matrix of the
/// holonomic bearing system, `(u2 − (x2/x1) u1) / x1³`.
pub fn bearing_obs_det(x: &[f64], u: &[f64]) -> Result<f64> {
    check_len("bearing state", 2, x)?;
    check_len("bearing input", 2, u)?;
    if x[0] == 0.0 {
        return Err(Error::OutputDomain {
            x: x.to_vec(),
            reason: "bearing undefined at x1 = 0".into(),
        });
    }
    Ok((u[1] - x[1] / x[0] * u[0]) / (x[0] * x[0] * x[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Var};
    use crate::model::GainMatrix;
    use crate::systems::{HolonomicBearing, LinearSystem};

    fn scalar_decay() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn zero_gain(p: usize, n: usize) -> Policy {
        Policy::Gain(GainMatrix::constant(DMatrix::zeros(p, n)).unwrap())
    }

    #[test]
    fn perturbation_order() {
        let p = perturbed_initial_conditions(&[-1.0, 2.0], 0.1).unwrap();
        let expected = [[-0.9, 2.0], [-1.1, 2.0], [-1.0, 2.1], [-1.0, 1.9]];
        for (a, b) in p.iter().zip(expected) {
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
        assert!(perturbed_initial_conditions(&[1.0], 0.0).is_err());
        assert_eq!(perturbed_initial_conditions(&[5.0], 1.0).unwrap(), vec![vec![6.0], vec![4.0]]);
    }

    #[test]
    fn scalar_decay_gramian() {
        let g = empirical_gramian(
            &scalar_decay(),
            &zero_gain(1, 1),
            &[1.0],
            0.3,
            1.0,
            &IntegratorConfig::default(),
            Execution::Sequential,
        )
        .unwrap();
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        // Trapezoid on dt = 1e-3 is second order.
        assert!((g.w[(0, 0)] - exact).abs() < 2e-7);
        assert!((trace_index(&g) - g.w.trace()).abs() <= 1e-12 * g.w.trace());
    }

    #[test]
    fn zero_output_gives_zero_gramian() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let g = empirical_gramian(&sys, &zero_gain(1, 1), &[1.0], 0.01, 1.0, &IntegratorConfig::default(), Execution::Sequential)
            .unwrap();
        assert_eq!(g.w[(0, 0)], 0.0);
        assert_eq!(trace_index(&g), 0.0);
    }

    #[test]
    fn trace_index_of_plain_matrices() {
        let g = GramianResult::from_matrix(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0])), 0.01, 1.0);
        assert_eq!(trace_index(&g), 5.0);
        assert_eq!(trace_index(&GramianResult::from_matrix(DMatrix::zeros(2, 2), 0.01, 1.0)), 0.0);
    }

    #[test]
    fn linear_gramian_examples() {
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        let w = linear_gramian(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
        assert!((w[(0, 0)] - exact).abs() < 1e-13);
        let w = linear_gramian(&DMatrix::from_element(2, 2, 0.3), &DMatrix::zeros(1, 2), 1.0).unwrap();
        assert_eq!(w, DMatrix::zeros(2, 2));
        let w = linear_gramian(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 2.0).unwrap();
        assert!((w - DMatrix::identity(2, 2) * 2.0).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lqr_closed_loop_bearing_gramian_is_rank_one() {
        let k = GainMatrix::constant(-DMatrix::identity(2, 2)).unwrap();
        let g = empirical_gramian(
            &HolonomicBearing,
            &Policy::Gain(k),
            &[-1.0, 2.0],
            0.01,
            5.0,
            &IntegratorConfig::default(),
            Execution::Parallel,
        )
        .unwrap();
        assert!(g.is_psd());
        assert!(g.condition_ratio() <= 1e-6, "ratio {}", g.condition_ratio());
        // Each output difference is frozen in time: the Gramian equals the
        // outer product of the initial differences times ∫dt.
        let y = |x1: f64, x2: f64| x2 / x1;
        let d = [
            y(-0.99, 2.0) - y(-1.01, 2.0),
            y(-1.0, 2.01) - y(-1.0, 1.99),
        ];
        for i in 0..2 {
            for j in 0..2 {
                let direct = 5.0 * d[i] * d[j] / (4.0 * 0.01 * 0.01);
                assert!((g.w[(i, j)] - direct).abs() <= 1e-9 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let k = GainMatrix::constant(DMatrix::from_row_slice(2, 2, &[-1.2, 0.3, 0.1, -0.8])).unwrap();
        let run = |exec| {
            empirical_gramian(&HolonomicBearing, &Policy::Gain(k.clone()), &[-1.0, 2.0], 0.01, 2.0, &IntegratorConfig::default(), exec)
                .unwrap()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn bearing_determinant_examples() {
        assert_eq!(bearing_obs_det(&[-1.0, 2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(bearing_obs_det(&[1.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(bearing_obs_det(&[2.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(bearing_obs_det(&[0.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn bearing_determinant_matches_symbolic_rows() {
        // Rows of dO are ∂y/∂x and ∂ẏ/∂x with ẏ = ∇y · u for ẋ = u.
        let y = parse("x2/x1", 2, 2).unwrap();
        let ydot_text = format!(
            "({}) * u1 + ({}) * u2",
            y.differentiate(Var::X(0)),
            y.differentiate(Var::X(1))
        );
        let ydot = parse(&ydot_text, 2, 2).unwrap();
        for (x, u) in [([1.0, 1.0], [0.0, 1.0]), ([-0.5, 2.0], [0.3, -1.1]), ([2.0, -3.0], [1.0, 0.5])] {
            let row = |e: &crate::expr::Expression| -> [f64; 2] {
                [
                    e.differentiate(Var::X(0)).eval(&x, &u, 0.0).unwrap(),
                    e.differentiate(Var::X(1)).eval(&x, &u, 0.0).unwrap(),
                ]
            };
            let (r1, r2) = (row(&y), row(&ydot));
            let det = r1[0] * r2[1] - r1[1] * r2[0];
            let closed = bearing_obs_det(&x, &u).unwrap();
            assert!((det - closed).abs() <= 1e-12 * closed.abs().max(1.0), "{det} vs {closed}");
        }
    }
}
