use crate::{Error, Result};

/// Uniform sampling grid `t_k = t0 + k·h`, `k = 0..=n_steps`.
///
/// In discrete time `h = 1` and `t_k` is the sample index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub h: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// `n_steps = 0` is accepted and yields empty runs.
    pub fn new(t0: f64, h: f64, n_steps: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() || !t0.is_finite() {
            return Err(Error::InvalidConfig(format!("grid step must be positive and finite, got {h}")));
        }
        Ok(Self { t0, h, n_steps })
    }

    /// Grid covering `[0, t_end]`; the number of steps is rounded to the nearest integer.
    pub fn horizon(t_end: f64, h: f64) -> Result<Self> {
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidConfig(format!("horizon must be non-negative, got {t_end}")));
        }
        let grid = Self::new(0.0, h, 0)?;
        Ok(Self { n_steps: (t_end / h).round() as usize, ..grid })
    }

    /// Unit-step grid for discrete-time recursions.
    pub fn discrete(n_steps: usize) -> Self {
        Self { t0: 0.0, h: 1.0, n_steps }
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_steps)
    }
}
