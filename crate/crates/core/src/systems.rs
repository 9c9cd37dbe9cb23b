//! Concrete [`ControlAffineSystem`] implementations.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::{Expression, Var};
use crate::model::ControlAffineSystem;

/// `ẋ = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidArgument("A must be square and non-empty".into()));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::InvalidArgument(format!("B must have {n} rows and at least one column")));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::InvalidArgument(format!("C must have {n} columns and at least one row")));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            out[i * cols + j] = m[(i, j)];
        }
    }
}

fn mat_vec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for i in 0..m.nrows() {
        out[i] = (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum();
    }
}

impl ControlAffineSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn name(&self) -> &str {
        "lti"
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        mat_vec(&self.a, x, out);
        Ok(())
    }

    fn control_field(&self, i: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.b[(r, i)];
        }
        Ok(())
    }

    fn output(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        mat_vec(&self.c, x, out);
        Ok(())
    }

    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        write_row_major(&self.a, out);
        Ok(())
    }

    fn control_field_jacobian(&self, _i: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn output_jacobian(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        write_row_major(&self.c, out);
        Ok(())
    }

    fn dynamics_jacobian(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        write_row_major(&self.a, out);
        Ok(())
    }
}

/// Planar holonomic vehicle `ẋ1 = u1, ẋ2 = u2` observed by a bearing-only
/// sensor at the origin, `y = x2 / x1`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HolonomicBearing;

impl HolonomicBearing {
    pub const NAME: &'static str = "holonomic_bearing";

    fn domain_check(x: &[f64]) -> Result<()> {
        if x[0] == 0.0 {
            return Err(Error::OutputDomain {
                x: x.to_vec(),
                reason: "bearing undefined at x1 = 0".into(),
            });
        }
        Ok(())
    }
}

impl ControlAffineSystem for HolonomicBearing {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn name(&self) -> &str {
        Self::NAME
    }

    fn drift(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn control_field(&self, i: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        out[i] = 1.0;
        Ok(())
    }

    fn output(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::domain_check(x)?;
        out[0] = x[1] / x[0];
        Ok(())
    }

    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn control_field_jacobian(&self, _i: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn output_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::domain_check(x)?;
        out[0] = -x[1] / (x[0] * x[0]);
        out[1] = 1.0 / x[0];
        Ok(())
    }

    fn dynamics_jacobian(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// A system declared by expression strings over `x1..xn`. Jacobians are
/// obtained by symbolic differentiation at construction time.
#[derive(Debug, Clone)]
pub struct ExprSystem {
    drift: Vec<Expression>,
    fields: Vec<Vec<Expression>>,
    output: Vec<Expression>,
    drift_jac: Vec<Expression>,
    fields_jac: Vec<Vec<Expression>>,
    output_jac: Vec<Expression>,
}

impl ExprSystem {
    /// `drift` has `n` entries, `fields` holds `p` vector fields of `n`
    /// entries each, `output` has `m` entries. Expressions may reference
    /// `x1..xn` only.
    pub fn parse<S: AsRef<str>>(drift: &[S], fields: &[Vec<S>], output: &[S]) -> Result<Self> {
        let n = drift.len();
        if n == 0 || fields.is_empty() || output.is_empty() {
            return Err(Error::InvalidArgument(
                "expression system needs at least one state, input and output".into(),
            ));
        }
        let parse_all = |what: &str, list: &[S]| -> Result<Vec<Expression>> {
            list.iter()
                .enumerate()
                .map(|(i, s)| {
                    let e = Expression::parse(s.as_ref(), n, 0)
                        .map_err(|e| Error::InvalidArgument(format!("{what}[{i}]: {e}")))?;
                    if e.depends_on(Var::T) {
                        return Err(Error::InvalidArgument(format!(
                            "{what}[{i}]: time-varying expressions are not supported"
                        )));
                    }
                    Ok(e)
                })
                .collect()
        };
        let drift = parse_all("drift", drift)?;
        let mut parsed_fields = Vec::with_capacity(fields.len());
        for (a, f) in fields.iter().enumerate() {
            if f.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "control_fields[{a}] has {} entries, expected {n}",
                    f.len()
                )));
            }
            parsed_fields.push(parse_all("control_fields", f)?);
        }
        let output = parse_all("output", output)?;
        let jac = |list: &[Expression]| -> Vec<Expression> {
            list.iter()
                .flat_map(|e| (0..n).map(move |j| e.differentiate(Var::X(j))))
                .collect()
        };
        Ok(Self {
            drift_jac: jac(&drift),
            fields_jac: parsed_fields.iter().map(|f| jac(f)).collect(),
            output_jac: jac(&output),
            drift,
            fields: parsed_fields,
            output,
        })
    }

    fn eval_into(list: &[Expression], x: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(list) {
            *o = e.eval(x, &[], 0.0)?;
        }
        Ok(())
    }

    /// Output-map failures are reported as output-domain errors.
    fn eval_output_into(list: &[Expression], x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::eval_into(list, x, out).map_err(|e| Error::OutputDomain {
            x: x.to_vec(),
            reason: e.to_string(),
        })
    }
}

impl ControlAffineSystem for ExprSystem {
    fn state_dim(&self) -> usize {
        self.drift.len()
    }

    fn input_dim(&self) -> usize {
        self.fields.len()
    }

    fn output_dim(&self) -> usize {
        self.output.len()
    }

    fn name(&self) -> &str {
        "expressions"
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::eval_into(&self.drift, x, out)
    }

    fn control_field(&self, i: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::eval_into(&self.fields[i], x, out)
    }

    fn output(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::eval_output_into(&self.output, x, out)
    }

    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::eval_into(&self.drift_jac, x, out)
    }

    fn control_field_jacobian(&self, i: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::eval_into(&self.fields_jac[i], x, out)
    }

    fn output_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        Self::eval_output_into(&self.output_jac, x, out)
    }
}

type FieldFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A system from plain closures. Jacobians fall back to central finite
/// differences; a non-finite output is reported as an output-domain error.
#[derive(Clone)]
pub struct FnSystem {
    n: usize,
    m: usize,
    drift: FieldFn,
    fields: Vec<FieldFn>,
    output: FieldFn,
}

impl FnSystem {
    pub fn new(n: usize, m: usize, drift: FieldFn, fields: Vec<FieldFn>, output: FieldFn) -> Self {
        Self {
            n,
            m,
            drift,
            fields,
            output,
        }
    }
}

fn copy_checked(what: &'static str, v: Vec<f64>, out: &mut [f64]) -> Result<()> {
    if v.len() != out.len() {
        return Err(Error::Dimension {
            context: what,
            expected: out.len(),
            actual: v.len(),
        });
    }
    out.copy_from_slice(&v);
    Ok(())
}

impl ControlAffineSystem for FnSystem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.fields.len()
    }

    fn output_dim(&self) -> usize {
        self.m
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        copy_checked("drift", (self.drift)(x), out)
    }

    fn control_field(&self, i: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        copy_checked("control field", (self.fields[i])(x), out)
    }

    fn output(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        copy_checked("output", (self.output)(x), out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutputDomain {
                x: x.to_vec(),
                reason: "non-finite output".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{eval_closed_loop, eval_dynamics, eval_output, validate_system, GainMatrix};

    fn bearing_expr() -> ExprSystem {
        ExprSystem::parse(&["0", "0"], &[vec!["1", "0"], vec!["0", "1"]], &["x2/x1"]).unwrap()
    }

    #[test]
    fn holonomic_dynamics_and_output() {
        let sys = HolonomicBearing;
        validate_system(&sys).unwrap();
        assert_eq!(eval_dynamics(&sys, &[-1.0, 2.0], &[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
        let k = GainMatrix::constant(-DMatrix::identity(2, 2)).unwrap();
        assert_eq!(eval_closed_loop(&sys, &[-1.0, 2.0], &k).unwrap(), vec![1.0, -2.0]);
        assert_eq!(eval_output(&sys, &[-1.0, 2.0]).unwrap(), vec![-2.0]);
        assert!(matches!(eval_output(&sys, &[0.0, 1.0]), Err(Error::OutputDomain { .. })));
    }

    #[test]
    fn zero_input_gives_drift() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let x = [0.3, -1.1];
        let mut f0 = [0.0; 2];
        sys.drift(&x, &mut f0).unwrap();
        assert_eq!(eval_dynamics(&sys, &x, &[0.0]).unwrap(), f0.to_vec());
        let k = GainMatrix::constant(DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(eval_closed_loop(&sys, &x, &k).unwrap(), f0.to_vec());
    }

    #[test]
    fn double_integrator_arithmetic() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(eval_dynamics(&sys, &[1.0, 0.0], &[2.0]).unwrap(), vec![0.0, 2.0]);
        assert_eq!(eval_output(&sys, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn scalar_closed_loop() {
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let k = GainMatrix::constant(DMatrix::from_element(1, 1, -3.0)).unwrap();
        assert_eq!(eval_closed_loop(&sys, &[2.0], &k).unwrap(), vec![-6.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let sys = HolonomicBearing;
        assert!(matches!(eval_dynamics(&sys, &[1.0], &[1.0, 1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(eval_dynamics(&sys, &[1.0, 1.0], &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn expression_system_matches_builtin() {
        let e = bearing_expr();
        validate_system(&e).unwrap();
        let x = [-0.7, 1.3];
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        e.output_jacobian(&x, &mut a).unwrap();
        HolonomicBearing.output_jacobian(&x, &mut b).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
        assert!(matches!(eval_output(&e, &[0.0, 1.0]), Err(Error::OutputDomain { .. })));
    }

    #[test]
    fn expression_system_rejects_inputs_and_time() {
        assert!(ExprSystem::parse(&["u1"], &[vec!["1"]], &["x1"]).is_err());
        assert!(ExprSystem::parse(&["t"], &[vec!["1"]], &["x1"]).is_err());
        assert!(ExprSystem::parse(&["0", "0"], &[vec!["1"]], &["x1"]).is_err());
    }

    #[test]
    fn fd_jacobians_match_symbolic() {
        let e = ExprSystem::parse(
            &["-x1 + sin(x2)", "x1*x2"],
            &[vec!["cos(x1)", "1"]],
            &["x1^2 + exp(x2)"],
        )
        .unwrap();
        let fnsys = FnSystem::new(
            2,
            1,
            Arc::new(|x: &[f64]| vec![-x[0] + x[1].sin(), x[0] * x[1]]),
            vec![Arc::new(|x: &[f64]| vec![x[0].cos(), 1.0])],
            Arc::new(|x: &[f64]| vec![x[0] * x[0] + x[1].exp()]),
        );
        let x = [0.4, -0.9];
        let mut s = [0.0; 4];
        let mut f = [0.0; 4];
        e.dynamics_jacobian(&x, &[0.8], &mut s).unwrap();
        fnsys.dynamics_jacobian(&x, &[0.8], &mut f).unwrap();
        for (p, q) in s.iter().zip(&f) {
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
        let mut so = [0.0; 2];
        let mut fo = [0.0; 2];
        e.output_jacobian(&x, &mut so).unwrap();
        fnsys.output_jacobian(&x, &mut fo).unwrap();
        for (p, q) in so.iter().zip(&fo) {
            assert!((p - q).abs() < 1e-8);
        }
    }
}
