//! Noise schedule: cosine beta schedule with validated boundary behavior.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("timestep {t} out of range 0..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("schedule invariant violated: {0}")]
    Invariant(String),
}

/// Diffusion constants indexed by timestep `0..=t_max`, with
/// `alpha_bar[0] = 1` and `alpha_bar[t_max] < 0.01`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t_max: usize,
    /// `beta[t]` for t in 1..=t_max; `beta[0]` is unused and zero.
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Cosine schedule (offset 0.008), betas clipped to (1e-8, 0.999].
    pub fn cosine(t_max: usize) -> Result<Self, ScheduleError> {
        assert!(t_max >= 2, "schedule needs at least 2 steps");
        let s = 0.008;
        let f = |t: f64| ((t / t_max as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2);
        let f0 = f(0.0);
        let mut beta = vec![0.0; t_max + 1];
        let mut alpha_bar = vec![1.0; t_max + 1];
        // alpha_bar recomputed from clipped betas so the running product
        // stays consistent with what forward noising will use.
        let mut prev = 1.0;
        for t in 1..=t_max {
            let raw = 1.0 - (f(t as f64) / f0) / prev;
            let b = raw.clamp(1e-8, 0.999);
            beta[t] = b;
            prev *= 1.0 - b;
            alpha_bar[t] = prev;
        }
        let sched = Self { t_max, beta, alpha_bar };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let err = |m: String| Err(ScheduleError::Invariant(m));
        if self.beta.len() != self.t_max + 1 || self.alpha_bar.len() != self.t_max + 1 {
            return err("length mismatch".into());
        }
        for t in 1..=self.t_max {
            if !(self.beta[t] > 0.0 && self.beta[t] < 1.0) {
                return err(format!("beta[{t}] = {} not in (0, 1)", self.beta[t]));
            }
            if self.alpha_bar[t] >= self.alpha_bar[t - 1] {
                return err(format!("alpha_bar not strictly decreasing at t = {t}"));
            }
        }
        if self.alpha_bar[0] <= 0.99 {
            return err(format!("alpha_bar[0] = {} <= 0.99", self.alpha_bar[0]));
        }
        if self.alpha_bar[self.t_max] >= 0.01 {
            return err(format!("alpha_bar[T] = {} >= 0.01", self.alpha_bar[self.t_max]));
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    pub fn check_t(&self, t: usize) -> Result<(), ScheduleError> {
        if t > self.t_max {
            return Err(ScheduleError::TimestepOutOfRange { t, t_max: self.t_max });
        }
        Ok(())
    }
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`.
///
/// The caller supplies the noise, keeping sampling deterministic under its
/// own seeding scheme.
pub fn forward_noise(
    schedule: &DiffusionSchedule,
    x0: &Array2<f64>,
    t: usize,
    noise: &Array2<f64>,
) -> Result<Array2<f64>, ScheduleError> {
    schedule.check_t(t)?;
    assert_eq!(x0.dim(), noise.dim(), "noise shape must match x0");
    let ab = schedule.alpha_bar[t];
    Ok(x0 * ab.sqrt() + noise * (1.0 - ab).sqrt())
}
