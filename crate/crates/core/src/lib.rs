//! Observability-aware piecewise linear state feedback.
//!
//! Synthesizes stabilizing gains `u = K_j x` on a grid of time segments for
//! control-affine systems `ẋ = f0(x) + Σ f_i(x) u_i`, `y = h(x)`, by minimizing
//! an LQR-style regulation cost minus a saturated, exponentially fading
//! reward built from the empirical observability Gramian. The gain gradient
//! comes from forward sensitivities of an augmented state that stacks the
//! nominal trajectory, `2n` perturbed trajectories and the running cost.
//!
//! Module map:
//!
//! * [`model`]: systems, gains, trajectories, closed-loop evaluation.
//! * [`expr`]: expression language for scenario-declared systems.
//! * [`ode`]: fixed-step RK4.
//! * [`gramian`]: empirical and linear observability Gramians.
//! * [`cost`]: running and terminal cost terms, saturation policy.
//! * [`sensitivity`]: augmented state, gain sensitivities, gradients.
//! * [`optimizer`]: diminishing-step gradient descent over one segment.
//! * [`synthesis`]: segment orchestration, LQR baseline, stability monitors.
//! * [`selftest`]: the acceptance property suite, shared by tests and CLI.
//!
//! ```no_run
//! use nalgebra::DMatrix;
//! use obsgain::cost::{CostSpec, ZetaPolicy};
//! use obsgain::synthesis::{synthesize, SegmentPlan, SynthesisOptions};
//! use obsgain::systems::HolonomicBearing;
//!
//! # fn main() -> obsgain::Result<()> {
//! let eye = DMatrix::<f64>::identity(2, 2);
//! let spec = CostSpec::new(eye.clone(), eye.clone(), eye * 0.1, 0.01, ZetaPolicy::Fixed(50.0))?;
//! let plan = SegmentPlan::uniform(10.0, 1.0)?;
//! let result = synthesize(&HolonomicBearing, &spec, &plan, &[-1.0, 2.0], &SynthesisOptions::default())?;
//! println!("total cost {}", result.total_cost(&spec));
//! # Ok(())
//! # }
//! ```

pub mod cost;
pub mod error;
pub mod expr;
pub mod gramian;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod optimizer;
pub mod par;
pub mod selftest;
pub mod sensitivity;
pub mod synthesis;
pub mod systems;

pub use error::{Error, Result};
pub use model::{ControlAffineSystem, GainMatrix, Trajectory};
