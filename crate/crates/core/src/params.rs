//! Configuration of one flow run / one solve.

use crate::error::{Result, WfrError};

/// Time step, growth strength and solver tolerances for a flow run.
///
/// `eps_schedule` is the regularization ladder: the solver sweeps it in order
/// and the last entry must equal `eps`. Pre-target stages iterate until the
/// fixed-point residual drops below `prestage_tol` or `prestage_max_iters` is
/// hit; the target stage uses `stop_tol` / `max_iters`.
#[derive(Debug, Clone)]
pub struct FlowParams {
    pub tau: f64,
    pub lambda: f64,
    pub eps: f64,
    pub eps_schedule: Vec<f64>,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub absorb_threshold: f64,
    pub prestage_tol: f64,
    pub prestage_max_iters: usize,
}

impl FlowParams {
    pub fn new(tau: f64, lambda: f64, eps: f64) -> Self {
        FlowParams {
            tau,
            lambda,
            eps,
            eps_schedule: default_eps_schedule(eps),
            stop_tol: 1e-6,
            max_iters: 50_000,
            absorb_threshold: 300.0,
            prestage_tol: 1e-6,
            prestage_max_iters: 5_000,
        }
    }

    pub fn with_schedule(mut self, schedule: Vec<f64>) -> Self {
        self.eps_schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WfrError::InvalidArgument(m));
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be >= 0, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if 2.0 * self.tau * self.lambda >= 1.0 {
            return bad(format!("need 2*tau*lambda < 1, got {}", 2.0 * self.tau * self.lambda));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if self.eps_schedule.is_empty() || *self.eps_schedule.last().unwrap() != self.eps {
            return bad("eps_schedule must end with eps".into());
        }
        if self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps_schedule must be strictly decreasing".into());
        }
        if !(self.stop_tol > 0.0) || !(self.prestage_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_iters == 0 || self.prestage_max_iters == 0 {
            return bad("iteration caps must be positive".into());
        }
        if !(self.absorb_threshold > 0.0) {
            return bad("absorb_threshold must be positive".into());
        }
        Ok(())
    }
}

/// Regularization ladder ending at `eps`: factors of 10 down to 1e-3, then
/// factors of sqrt(10). The finer low end keeps each stage warm enough to
/// hand off; a bare /10 ladder leaves the last stages far from their fixed
/// point on coarse grids.
pub fn default_eps_schedule(eps: f64) -> Vec<f64> {
    let mut s = vec![1.0_f64];
    if eps >= 1.0 {
        return vec![eps];
    }
    while s.last().unwrap() / 10.0 >= eps * 1.000_001 && *s.last().unwrap() > 1.1e-3 {
        let next = s.last().unwrap() / 10.0;
        s.push(next);
    }
    let sq10 = 10.0_f64.sqrt();
    while *s.last().unwrap() > eps * 1.000_001 {
        let next = (s.last().unwrap() / sq10).max(eps);
        s.push(next);
    }
    if (s.last().unwrap() - eps).abs() > 0.0 {
        s.push(eps);
    }
    s
}
