//! Control-affine systems, feedback gains and sampled trajectories.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::ode::{self, IntegratorConfig};

/// Relative step for central finite differences: `h = FD_STEP * (1 + |x|)`.
pub const FD_STEP: f64 = 1e-6;

/// `ẋ = f0(x) + Σ_i f_i(x) u_i`, `y = h(x)`.
///
/// Matrices exchanged through the Jacobian hooks are row-major slices.
/// Implementations must be pure; evaluation may happen from several threads
/// at once.
pub trait ControlAffineSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// The `i`-th control vector field (zero-based).
    fn control_field(&self, i: usize, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn output(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn name(&self) -> &str {
        "custom"
    }

    /// `∂f0/∂x`, `n × n`.
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        fd_jacobian(|z, o| self.drift(z, o), x, self.state_dim(), out)
    }

    /// `∂f_i/∂x`, `n × n`.
    fn control_field_jacobian(&self, i: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        fd_jacobian(|z, o| self.control_field(i, z, o), x, self.state_dim(), out)
    }

    /// `∂h/∂x`, `m × n`.
    fn output_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        fd_jacobian(|z, o| self.output(z, o), x, self.output_dim(), out)
    }

    /// `[f_1(x) … f_p(x)]` as an `n × p` row-major matrix.
    fn control_matrix(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (n, p) = (self.state_dim(), self.input_dim());
        let mut col = vec![0.0; n];
        for a in 0..p {
            self.control_field(a, x, &mut col)?;
            for i in 0..n {
                out[i * p + a] = col[i];
            }
        }
        Ok(())
    }

    /// Closed form of `∂(f0 + Σ f_i u_i)/∂x` at fixed `u`, `n × n`.
    fn dynamics_jacobian(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.state_dim();
        self.drift_jacobian(x, out)?;
        let mut tmp = vec![0.0; n * n];
        for (a, &ua) in u.iter().enumerate() {
            if ua == 0.0 {
                continue;
            }
            self.control_field_jacobian(a, x, &mut tmp)?;
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t * ua;
            }
        }
        Ok(())
    }
}

/// Central finite-difference Jacobian of `f: ℝⁿ → ℝ^rows` into a row-major
/// `rows × n` buffer.
pub fn fd_jacobian<F>(f: F, x: &[f64], rows: usize, out: &mut [f64]) -> Result<()>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    let n = x.len();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; rows];
    let mut fm = vec![0.0; rows];
    for j in 0..n {
        let h = FD_STEP * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        f(&xp, &mut fp)?;
        xp[j] = x[j] - h;
        f(&xp, &mut fm)?;
        xp[j] = x[j];
        for r in 0..rows {
            out[r * n + j] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(())
}

/// Checks dimensions and that every map returns finite values at a probe
/// point away from the usual singular sets.
pub fn validate_system(sys: &dyn ControlAffineSystem) -> Result<()> {
    let (n, p, m) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
    if n == 0 || p == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "system dimensions must be positive (n = {n}, p = {p}, m = {m})"
        )));
    }
    let probe: Vec<f64> = (0..n).map(|i| 0.7 + 0.31 * i as f64).collect();
    let mut buf = vec![0.0; n];
    sys.drift(&probe, &mut buf)?;
    if buf.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("drift at probe point"));
    }
    for i in 0..p {
        sys.control_field(i, &probe, &mut buf)?;
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control field at probe point"));
        }
    }
    let mut y = vec![0.0; m];
    sys.output(&probe, &mut y)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("output at probe point"));
    }
    Ok(())
}

/// `f0(x) + Σ f_i(x) u_i`.
pub fn eval_dynamics(sys: &dyn ControlAffineSystem, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; sys.state_dim()];
    eval_dynamics_into(sys, x, u, &mut out)?;
    Ok(out)
}

pub fn eval_dynamics_into(
    sys: &dyn ControlAffineSystem,
    x: &[f64],
    u: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = sys.state_dim();
    check_len("state", n, x)?;
    check_len("input", sys.input_dim(), u)?;
    check_len("dynamics output buffer", n, out)?;
    sys.drift(x, out)?;
    let mut col = vec![0.0; n];
    for (i, &ui) in u.iter().enumerate() {
        sys.control_field(i, x, &mut col)?;
        for (o, c) in out.iter_mut().zip(&col) {
            *o += c * ui;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dynamics"));
    }
    Ok(())
}

/// `f(x, Kx)`.
pub fn eval_closed_loop(sys: &dyn ControlAffineSystem, x: &[f64], k: &GainMatrix) -> Result<Vec<f64>> {
    check_len("state", sys.state_dim(), x)?;
    let u = k.apply(x)?;
    eval_dynamics(sys, x, &u)
}

/// `h(x)`; a non-finite value is reported as an output-domain error.
pub fn eval_output(sys: &dyn ControlAffineSystem, x: &[f64]) -> Result<Vec<f64>> {
    check_len("state", sys.state_dim(), x)?;
    let mut y = vec![0.0; sys.output_dim()];
    sys.output(x, &mut y)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutputDomain {
            x: x.to_vec(),
            reason: "non-finite output".into(),
        });
    }
    Ok(y)
}

/// A `p × n` feedback gain valid on `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    entries: DMatrix<f64>,
    start: f64,
    end: f64,
}

impl GainMatrix {
    pub fn new(entries: DMatrix<f64>, start: f64, end: f64) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("gain entries must be finite".into()));
        }
        if !(start < end) || start.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "gain interval [{start}, {end}) is empty"
            )));
        }
        Ok(Self {
            entries,
            start,
            end,
        })
    }

    /// A gain valid for all `t ≥ 0`.
    pub fn constant(entries: DMatrix<f64>) -> Result<Self> {
        Self::new(entries, 0.0, f64::INFINITY)
    }

    /// Builds a `p × n` gain from a row-major slice.
    pub fn from_row_major(p: usize, n: usize, data: &[f64], start: f64, end: f64) -> Result<Self> {
        check_len("gain entries", p * n, data)?;
        Self::new(DMatrix::from_row_slice(p, n, data), start, end)
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }

    /// Gain entries flattened row-major, the ordering used for gradients.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (p, n) = self.entries.shape();
        let mut v = Vec::with_capacity(p * n);
        for a in 0..p {
            for b in 0..n {
                v.push(self.entries[(a, b)]);
            }
        }
        v
    }

    pub fn with_interval(&self, start: f64, end: f64) -> Result<Self> {
        Self::new(self.entries.clone(), start, end)
    }

    /// Same interval, new entries.
    pub fn with_entries_row_major(&self, data: &[f64]) -> Result<Self> {
        Self::from_row_major(self.rows(), self.cols(), data, self.start, self.end)
    }

    /// `K x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("gain input", self.cols(), x)?;
        let mut u = vec![0.0; self.rows()];
        apply_row_major(self.entries.as_slice(), self.rows(), self.cols(), x, &mut u, true);
        Ok(u)
    }
}

/// `u = K x` where `k` is stored column-major (`col_major = true`, nalgebra
/// layout) or row-major.
pub(crate) fn apply_row_major(k: &[f64], p: usize, n: usize, x: &[f64], u: &mut [f64], col_major: bool) {
    for a in 0..p {
        let mut acc = 0.0;
        for b in 0..n {
            let kab = if col_major { k[a + b * p] } else { k[a * n + b] };
            acc += kab * x[b];
        }
        u[a] = acc;
    }
}

/// Sampled states with optional controls and outputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Option<Vec<Vec<f64>>>,
    pub outputs: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let len = self.times.len();
        if self.states.len() != len {
            return Err(Error::dim("trajectory states", len, self.states.len()));
        }
        for (name, opt) in [("trajectory controls", &self.controls), ("trajectory outputs", &self.outputs)] {
            if let Some(v) = opt {
                if v.len() != len {
                    return Err(Error::dim(name, len, v.len()));
                }
            }
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("trajectory times not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Linear interpolation between grid points; clamps outside the range.
    pub fn state_at(&self, t: f64) -> Option<Vec<f64>> {
        if self.times.is_empty() {
            return None;
        }
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            return Some(self.states[0].clone());
        }
        if idx >= self.times.len() {
            return self.states.last().cloned();
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        Some(
            self.states[idx - 1]
                .iter()
                .zip(&self.states[idx])
                .map(|(a, b)| a + w * (b - a))
                .collect(),
        )
    }

    /// Appends `other`, dropping its first sample when it repeats our last
    /// time stamp (segment handoff).
    pub fn append(&mut self, other: Trajectory) {
        if self.times.is_empty() {
            *self = other;
            return;
        }
        let skip = match (self.times.last(), other.times.first()) {
            (Some(a), Some(b)) if a == b => 1,
            _ => 0,
        };
        self.times.extend(other.times.into_iter().skip(skip));
        self.states.extend(other.states.into_iter().skip(skip));
        match (&mut self.controls, other.controls) {
            (Some(c), Some(o)) => c.extend(o.into_iter().skip(skip)),
            _ => self.controls = None,
        }
        match (&mut self.outputs, other.outputs) {
            (Some(c), Some(o)) => c.extend(o.into_iter().skip(skip)),
            _ => self.outputs = None,
        }
    }
}

/// Control law applied along a simulation.
#[derive(Clone)]
pub enum Policy {
    /// `u = K x` for all time.
    Gain(GainMatrix),
    /// `u = K_j x` on each gain's interval; gains must tile the horizon.
    Piecewise(Vec<GainMatrix>),
    /// Open-loop `u(t)`.
    Signal(Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>),
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Gain(k) => f.debug_tuple("Gain").field(k).finish(),
            Policy::Piecewise(g) => f.debug_tuple("Piecewise").field(&g.len()).finish(),
            Policy::Signal(_) => f.write_str("Signal(..)"),
        }
    }
}

impl Policy {
    /// Times in `(t0, t1)` where the law switches.
    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            Policy::Piecewise(gains) => gains
                .iter()
                .map(GainMatrix::start)
                .filter(|&s| s > t0 && s < t1)
                .collect(),
            _ => Vec::new(),
        }
    }

    fn gain_at(&self, t: f64) -> Option<&GainMatrix> {
        match self {
            Policy::Gain(k) => Some(k),
            Policy::Piecewise(gains) => gains
                .iter()
                .find(|g| g.contains(t))
                .or_else(|| gains.last().filter(|g| t >= g.end())),
            Policy::Signal(_) => None,
        }
    }
}

/// Simulates `ẋ = f(x, u)` under `policy` on `[t0, t1]`, restarting the
/// integrator at every gain switch so each piece sits on its own grid.
/// Controls and outputs are attached to the result.
pub fn simulate_policy(
    sys: &dyn ControlAffineSystem,
    policy: &Policy,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_len("initial state", sys.state_dim(), x0)?;
    if let Policy::Piecewise(g) = policy {
        if g.is_empty() {
            return Err(Error::InvalidArgument("empty piecewise policy".into()));
        }
    }
    if t1 <= t0 {
        let mut tr = Trajectory {
            times: vec![t0],
            states: vec![x0.to_vec()],
            ..Default::default()
        };
        attach_signals(sys, policy, &mut tr)?;
        return Ok(tr);
    }
    let mut cuts = vec![t0];
    cuts.extend(policy.breakpoints(t0, t1));
    cuts.push(t1);
    let mut out = Trajectory::default();
    let mut x = x0.to_vec();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let gain = policy.gain_at(a).cloned();
        let piece = match (&gain, policy) {
            (Some(k), _) => ode::integrate(
                |_t, z, dz| {
                    let u = k.apply(z)?;
                    eval_dynamics_into(sys, z, &u, dz)
                },
                &x,
                a,
                b,
                cfg,
            )?,
            (None, Policy::Signal(sig)) => ode::integrate(
                |t, z, dz| {
                    let u = sig(t);
                    eval_dynamics_into(sys, z, &u, dz)
                },
                &x,
                a,
                b,
                cfg,
            )?,
            (None, _) => {
                return Err(Error::InvalidArgument(format!("no gain covers t = {a}")));
            }
        };
        x = piece.states.last().cloned().unwrap_or_else(|| x.clone());
        out.append(piece);
    }
    attach_signals(sys, policy, &mut out)?;
    Ok(out)
}

fn attach_signals(sys: &dyn ControlAffineSystem, policy: &Policy, tr: &mut Trajectory) -> Result<()> {
    let mut controls = Vec::with_capacity(tr.len());
    let mut outputs = Vec::with_capacity(tr.len());
    for (&t, x) in tr.times.iter().zip(&tr.states) {
        let u = match policy {
            Policy::Signal(sig) => sig(t),
            _ => policy
                .gain_at(t)
                .ok_or_else(|| Error::InvalidArgument(format!("no gain covers t = {t}")))?
                .apply(x)?,
        };
        controls.push(u);
        outputs.push(eval_output(sys, x)?);
    }
    tr.controls = Some(controls);
    tr.outputs = Some(outputs);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn piece(t: &[f64], with_controls: bool) -> Trajectory {
        Trajectory {
            times: t.to_vec(),
            states: t.iter().map(|&v| vec![v]).collect(),
            controls: with_controls.then(|| t.iter().map(|&v| vec![-v]).collect()),
            outputs: None,
        }
    }

    #[test]
    fn append_into_empty_keeps_signals() {
        let mut tr = Trajectory::default();
        tr.append(piece(&[0.0, 0.5, 1.0], true));
        tr.append(piece(&[1.0, 1.5], true));
        assert_eq!(tr.times, vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(tr.controls.as_ref().map(Vec::len), Some(4));
        assert!(tr.outputs.is_none());
    }

    #[test]
    fn append_drops_signals_missing_from_either_side() {
        let mut tr = piece(&[0.0, 1.0], true);
        tr.append(piece(&[2.0], false));
        assert_eq!(tr.times, vec![0.0, 1.0, 2.0]);
        assert!(tr.controls.is_none());
    }
}
