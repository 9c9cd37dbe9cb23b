//! Fixed-step classical Runge–Kutta integration.
//!
//! Every quantity in the crate that is integrated over a segment (nominal and
//! perturbed trajectories, running cost, gain sensitivities) lives on the
//! grid produced by [`time_grid`], so gradients computed by co-integration
//! are exact derivatives of the discretized cost.

use crate::error::{Error, Result};
use crate::model::Trajectory;

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { dt: DEFAULT_DT }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("integrator dt must be positive, got {dt}")));
        }
        Ok(Self { dt })
    }
}

/// Uniform grid `t0, t0 + dt, …` ending exactly at `t1`. The final step is
/// shortened when `dt` does not divide the interval; a remainder below
/// `1e-9·dt` is absorbed instead of producing a sliver step.
pub fn time_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    if t1 <= t0 {
        return vec![t0];
    }
    let ratio = (t1 - t0) / dt;
    let nearest = ratio.round();
    let steps = if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
    .max(1);
    let mut grid: Vec<f64> = (0..steps).map(|k| t0 + k as f64 * dt).collect();
    grid.push(t1);
    grid
}

/// Reusable RK4 stage buffers for a state of fixed dimension.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `z` in place from `t` to `t + h`.
    #[allow(clippy::needless_range_loop)]
    pub fn step<F>(&mut self, f: &mut F, t: f64, z: &mut [f64], h: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let d = z.len();
        f(t, z, &mut self.k1)?;
        for i in 0..d {
            self.tmp[i] = z[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2)?;
        for i in 0..d {
            self.tmp[i] = z[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3)?;
        for i in 0..d {
            self.tmp[i] = z[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4)?;
        for i in 0..d {
            z[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// Integrates `ż = f(t, z)` from `t0` to `t1` on [`time_grid`]. Both
/// endpoints are included in the returned trajectory.
///
/// A non-finite state (or a non-finite right-hand side) is reported as
/// [`Error::Divergence`] with the time of the failing step; domain errors
/// raised by `f` propagate unchanged.
pub fn integrate<F>(mut f: F, z0: &[f64], t0: f64, t1: f64, cfg: &IntegratorConfig) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(t0 < t1) {
        return Err(Error::InvalidArgument(format!("integration interval [{t0}, {t1}] is empty")));
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { time: t0 });
    }
    let grid = time_grid(t0, t1, cfg.dt);
    let mut rk = Rk4::new(z0.len());
    let mut z = z0.to_vec();
    let mut states = Vec::with_capacity(grid.len());
    states.push(z.clone());
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        rk.step(&mut f, t, &mut z, t_next - t).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { time: t_next },
            other => other,
        })?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t_next });
        }
        states.push(z.clone());
    }
    Ok(Trajectory {
        times: grid,
        states,
        controls: None,
        outputs: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay_endpoint(dt: f64) -> f64 {
        let tr = integrate(
            |_t, z, dz| {
                dz[0] = -z[0];
                Ok(())
            },
            &[1.0],
            0.0,
            1.0,
            &IntegratorConfig { dt },
        )
        .unwrap();
        tr.states.last().unwrap()[0]
    }

    #[test]
    fn exponential_decay_endpoint() {
        let z1 = decay_endpoint(1e-3);
        assert!((z1 - (-1.0f64).exp()).abs() <= 1e-10);
    }

    #[test]
    fn constant_field_keeps_state() {
        let tr = integrate(
            |_t, _z, dz| {
                dz[0] = 0.0;
                dz[1] = 0.0;
                Ok(())
            },
            &[3.5, -2.0],
            0.0,
            2.0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert!(tr.states.iter().all(|s| s == &vec![3.5, -2.0]));
        assert_eq!(tr.times.first(), Some(&0.0));
        assert_eq!(tr.times.last(), Some(&2.0));
    }

    #[test]
    fn finite_time_blowup_is_divergence() {
        let err = integrate(
            |_t, z, dz| {
                dz[0] = z[0] * z[0];
                Ok(())
            },
            &[1.0],
            0.0,
            2.0,
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::Divergence { time } => assert!(time > 0.99 && time < 2.0, "time {time}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fourth_order_convergence() {
        // Coarse steps keep the error well above rounding.
        let exact = (-1.0f64).exp();
        let e1 = (decay_endpoint(0.1) - exact).abs();
        let e2 = (decay_endpoint(0.05) - exact).abs();
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn grid_shortens_last_step() {
        let g = time_grid(0.0, 1.05, 0.1);
        assert_eq!(g.len(), 12);
        assert!((g[10] - 1.0).abs() < 1e-12);
        assert_eq!(*g.last().unwrap(), 1.05);
        let g = time_grid(0.0, 1.0, 1e-3);
        assert_eq!(g.len(), 1001);
        assert_eq!(time_grid(2.0, 3.0, 1e-3).len(), 1001);
    }

    #[test]
    fn determinism() {
        assert_eq!(decay_endpoint(1e-3).to_bits(), decay_endpoint(1e-3).to_bits());
    }

    #[test]
    fn empty_interval_rejected() {
        assert!(integrate(|_t, _z, _d| Ok(()), &[0.0], 1.0, 1.0, &IntegratorConfig::default()).is_err());
    }
}
