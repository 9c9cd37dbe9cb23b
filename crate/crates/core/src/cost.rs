//! Running cost, saturated observability reward and terminal cost.
//!
//! The per-segment integrand is
//! `Γ = xᵀ(KᵀRK + Q)x − e^{−t} sat_ζ((1/4ε²) Σ_i ‖h(x^{+i}) − h(x^{−i})‖²)`
//! with `t` the global time, and the terminal cost is `L(x) = xᵀ Q_f x`.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::{min_sym_eigenvalue, quad_form};
use crate::model::GainMatrix;

pub const DEFAULT_EPSILON: f64 = 0.01;

/// How the saturation level `ζ` is picked on each segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZetaPolicy {
    Fixed(f64),
    /// Derived from a known lower bound `β` on the decay rate.
    DecayRule { beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub epsilon: f64,
    pub zeta_policy: ZetaPolicy,
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    (m - m.transpose()).iter().all(|v| v.abs() <= 1e-12 * scale)
}

impl CostSpec {
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        qf: DMatrix<f64>,
        epsilon: f64,
        zeta_policy: ZetaPolicy,
    ) -> Result<Self> {
        let spec = Self {
            q,
            r,
            qf,
            epsilon,
            zeta_policy,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let n = self.q.nrows();
        if self.q.ncols() != n || self.qf.shape() != (n, n) {
            return bad(format!("Q and Qf must both be {n}x{n}"));
        }
        if self.r.nrows() != self.r.ncols() || self.r.nrows() == 0 {
            return bad("R must be square and non-empty".into());
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("Qf", &self.qf)] {
            if m.iter().any(|v| !v.is_finite()) || !symmetric(m) {
                return bad(format!("{name} must be finite and symmetric"));
            }
        }
        if min_sym_eigenvalue(&self.q) <= 0.0 {
            return bad("Q must be positive definite".into());
        }
        if min_sym_eigenvalue(&self.r) <= 0.0 {
            return bad("R must be positive definite".into());
        }
        let qf_scale = self.qf.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if min_sym_eigenvalue(&self.qf) < -1e-12 * qf_scale {
            return bad("Qf must be positive semi-definite".into());
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        match self.zeta_policy {
            ZetaPolicy::Fixed(z) if !(z > 0.0) || !z.is_finite() => bad(format!("fixed zeta must be positive, got {z}")),
            ZetaPolicy::DecayRule { beta } if !(beta > 0.0) || !beta.is_finite() => {
                bad(format!("beta must be positive, got {beta}"))
            }
            _ => Ok(()),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }
}

/// Saturation level for one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaValue {
    pub value: f64,
    pub start: f64,
    pub end: f64,
}

/// `ζ` if `x > ζ`, else `x`.
pub fn sat(x: f64, zeta: f64) -> f64 {
    if x > zeta {
        zeta
    } else {
        x
    }
}

/// One-sided derivative used for gradients: 1 strictly below `ζ`, 0 at or
/// above it.
pub fn sat_derivative(x: f64, zeta: f64) -> f64 {
    if x < zeta {
        1.0
    } else {
        0.0
    }
}

/// `xᵀQx + uᵀRu`.
pub fn l1(x: &[f64], u: &[f64], spec: &CostSpec) -> Result<f64> {
    check_len("l1 state", spec.state_dim(), x)?;
    check_len("l1 input", spec.input_dim(), u)?;
    Ok(quad_form(&spec.q, x) + quad_form(&spec.r, u))
}

/// `(1/4ε²) Σ_i ‖y^{+i} − y^{−i}‖²` for outputs ordered `+1, −1, +2, −2, …`.
pub fn observability_density(perturbed_outputs: &[Vec<f64>], epsilon: f64) -> f64 {
    let mut acc = 0.0;
    for pair in perturbed_outputs.chunks_exact(2) {
        acc += pair[0]
            .iter()
            .zip(&pair[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    acc / (4.0 * epsilon * epsilon)
}

/// `e^{−t} sat_ζ(density)`; `t` is global time.
pub fn l2(t: f64, perturbed_outputs: &[Vec<f64>], zeta: f64, epsilon: f64) -> f64 {
    (-t).exp() * sat(observability_density(perturbed_outputs, epsilon), zeta)
}

/// Upper bound `b(t) = ζ e^{−t}` of the observability reward; it is also its
/// own tail integral `∫_t^∞ b`.
pub fn reward_bound(t: f64, zeta: f64) -> f64 {
    zeta * (-t).exp()
}

/// Saturation level for the segment `[t_start, t_end)` starting at `x_start`.
pub fn zeta_for_segment(policy: ZetaPolicy, x_start: &[f64], q: &DMatrix<f64>, t_start: f64, t_end: f64) -> ZetaValue {
    let value = match policy {
        ZetaPolicy::Fixed(z) => z,
        ZetaPolicy::DecayRule { beta } => {
            let norm_sq = quad_form(q, x_start);
            if beta <= 0.5 {
                norm_sq
            } else {
                ((1.0 - 2.0 * beta) * t_end).exp() * norm_sq
            }
        }
    };
    ZetaValue {
        value,
        start: t_start,
        end: t_end,
    }
}

/// `xᵀ Q_f x`.
pub fn terminal_cost(x: &[f64], qf: &DMatrix<f64>) -> Result<f64> {
    check_len("terminal state", qf.nrows(), x)?;
    Ok(quad_form(qf, x))
}

/// `l1(x, Kx) − l2(t, …)`.
pub fn gamma(
    t: f64,
    x: &[f64],
    perturbed_outputs: &[Vec<f64>],
    k: &GainMatrix,
    spec: &CostSpec,
    zeta: f64,
) -> Result<f64> {
    let u = k.apply(x)?;
    Ok(l1(x, &u, spec)? - l2(t, perturbed_outputs, zeta, spec.epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(sat(3.0, 2.0), 2.0);
        assert_eq!(sat(1.5, 2.0), 1.5);
        assert_eq!(sat(2.0, 2.0), 2.0);
        assert_eq!(sat_derivative(1.0, 2.0), 1.0);
        assert_eq!(sat_derivative(2.0, 2.0), 0.0);
    }

    #[test]
    fn l1_examples() {
        let spec = CostSpec::new(eye(2), eye(2), eye(2) * 0.1, 0.01, ZetaPolicy::Fixed(1.0)).unwrap();
        assert_eq!(l1(&[-1.0, 2.0], &[1.0, -2.0], &spec).unwrap(), 10.0);
        assert_eq!(l1(&[0.0, 0.0], &[0.0, 0.0], &spec).unwrap(), 0.0);
        let spec = CostSpec::new(eye(1) * 2.0, eye(1), eye(1), 0.01, ZetaPolicy::Fixed(1.0)).unwrap();
        assert_eq!(l1(&[3.0], &[1.0], &spec).unwrap(), 19.0);
    }

    #[test]
    fn l2_examples() {
        let same = vec![vec![1.0], vec![1.0], vec![2.0], vec![2.0]];
        assert_eq!(l2(0.3, &same, 2.0, 0.1), 0.0);
        // Density 5 from a single pair: (a − b)² / (4ε²) = 5 with ε = 0.5.
        let pair = vec![vec![5f64.sqrt()], vec![0.0]];
        assert!((observability_density(&pair, 0.5) - 5.0).abs() < 1e-12);
        assert!((l2(0.0, &pair, 2.0, 0.5) - 2.0).abs() < 1e-15);
        let pair = vec![vec![1.0], vec![0.0]];
        assert!((l2(2f64.ln(), &pair, 2.0, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zeta_rule_examples() {
        let z = zeta_for_segment(ZetaPolicy::DecayRule { beta: 0.25 }, &[-1.0, 2.0], &eye(2), 0.0, 1.0);
        assert_eq!(z.value, 5.0);
        let z = zeta_for_segment(ZetaPolicy::DecayRule { beta: 1.0 }, &[1.0, 0.0], &eye(2), 0.0, 1.0);
        assert!((z.value - (-1.0f64).exp()).abs() < 1e-15);
        let z = zeta_for_segment(ZetaPolicy::Fixed(3.0), &[10.0, -4.0], &eye(2), 2.0, 3.0);
        assert_eq!(z.value, 3.0);
        assert_eq!((z.start, z.end), (2.0, 3.0));
    }

    #[test]
    fn terminal_cost_examples() {
        assert!((terminal_cost(&[-1.0, 2.0], &(eye(2) * 0.1)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(terminal_cost(&[0.0, 0.0], &(eye(2) * 0.1)).unwrap(), 0.0);
        assert_eq!(terminal_cost(&[3.0, 1.0], &DMatrix::zeros(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn gamma_examples() {
        let spec = CostSpec::new(eye(2), eye(2), eye(2) * 0.1, 0.01, ZetaPolicy::Fixed(1.0)).unwrap();
        let same = vec![vec![1.0]; 4];
        let k0 = GainMatrix::constant(DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(gamma(0.0, &[-1.0, 2.0], &same, &k0, &spec, 1.0).unwrap(), 5.0);
        assert_eq!(gamma(0.0, &[0.0, 0.0], &same, &k0, &spec, 1.0).unwrap(), 0.0);
        // Γ = xᵀ(KᵀRK + Q)x − l2.
        let k = GainMatrix::constant(DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -2.0])).unwrap();
        let outs = vec![vec![0.4], vec![0.1], vec![-0.2], vec![0.3]];
        let x = [0.7, -1.2];
        let m = k.entries().transpose() * &spec.r * k.entries() + &spec.q;
        let direct = quad_form(&m, &x) - l2(0.5, &outs, 1.0, spec.epsilon);
        let g = gamma(0.5, &x, &outs, &k, &spec, 1.0).unwrap();
        assert!((g - direct).abs() <= 1e-14 * direct.abs().max(1.0));
    }

    #[test]
    fn spec_validation() {
        let ok = |q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>, eps: f64, z: ZetaPolicy| {
            CostSpec::new(q, r, qf, eps, z).is_ok()
        };
        assert!(ok(eye(2), eye(1), DMatrix::zeros(2, 2), 0.01, ZetaPolicy::Fixed(1.0)));
        assert!(!ok(DMatrix::zeros(2, 2), eye(1), eye(2), 0.01, ZetaPolicy::Fixed(1.0)));
        assert!(!ok(eye(2), -eye(1), eye(2), 0.01, ZetaPolicy::Fixed(1.0)));
        assert!(!ok(eye(2), eye(1), -eye(2), 0.01, ZetaPolicy::Fixed(1.0)));
        assert!(!ok(eye(2), eye(1), eye(2), 0.0, ZetaPolicy::Fixed(1.0)));
        assert!(!ok(eye(2), eye(1), eye(2), 0.01, ZetaPolicy::DecayRule { beta: 0.0 }));
        assert!(!ok(eye(2), eye(1), eye(3), 0.01, ZetaPolicy::Fixed(1.0)));
    }

    proptest! {
        #[test]
        fn sat_is_monotone_and_one_lipschitz(a in -10.0f64..10.0, b in -10.0f64..10.0, z in 0.01f64..5.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(sat(lo, z) <= sat(hi, z));
            prop_assert!((sat(a, z) - sat(b, z)).abs() <= (a - b).abs());
        }

        #[test]
        fn l2_within_bound(t in 0.0f64..20.0, z in 0.01f64..10.0,
                           ys in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let outs: Vec<Vec<f64>> = ys.iter().map(|v| vec![*v]).collect();
            let v = l2(t, &outs, z, 0.05);
            prop_assert!(v >= 0.0);
            prop_assert!(v <= reward_bound(t, z) * (1.0 + 1e-15));
        }
    }
}
