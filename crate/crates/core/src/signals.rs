//! Closed-form scalar time signals used as inputs, references, excitations and disturbances.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Constant { value: f64 },
    /// `offset + amplitude · sin(omega t + phase)`
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `Σ c_i e^{-a_i t}` with `terms = [[c_i, a_i], …]`
    ExpSum { terms: Vec<[f64; 2]> },
    /// `level` on `[0, until]`, zero afterwards.
    Pulse { level: f64, until: f64 },
    /// `c / (b + t²)`
    InverseQuadratic { c: f64, b: f64 },
    /// `amplitude · e^{-decay t} · cos(omega t)`
    DampedCosine { amplitude: f64, decay: f64, omega: f64 },
    Sum { terms: Vec<Signal> },
}

impl Signal {
    pub fn zero() -> Self {
        Signal::Constant { value: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Signal::Constant { value } => *value,
            Signal::Sinusoid { amplitude, omega, phase, offset } => offset + amplitude * (omega * t + phase).sin(),
            Signal::ExpSum { terms } => terms.iter().map(|[c, a]| c * (-a * t).exp()).sum(),
            Signal::Pulse { level, until } => {
                if t <= *until {
                    *level
                } else {
                    0.0
                }
            }
            Signal::InverseQuadratic { c, b } => c / (b + t * t),
            Signal::DampedCosine { amplitude, decay, omega } => amplitude * (-decay * t).exp() * (omega * t).cos(),
            Signal::Sum { terms } => terms.iter().map(|s| s.eval(t)).sum(),
        }
    }

    /// Upper bound on `|s(t)|` for `t ≥ 0`; exact for every primitive kind.
    pub fn sup_abs(&self) -> f64 {
        match self {
            Signal::Constant { value } => value.abs(),
            Signal::Sinusoid { amplitude, offset, .. } => offset.abs() + amplitude.abs(),
            Signal::ExpSum { terms } => {
                let decaying = terms.iter().all(|[_, a]| *a >= 0.0);
                if !decaying {
                    return f64::INFINITY;
                }
                terms.iter().map(|[c, _]| c.abs()).sum()
            }
            Signal::Pulse { level, .. } => level.abs(),
            Signal::InverseQuadratic { c, b } => {
                if *b > 0.0 {
                    (c / b).abs()
                } else {
                    f64::INFINITY
                }
            }
            Signal::DampedCosine { amplitude, decay, .. } => {
                if *decay >= 0.0 {
                    amplitude.abs()
                } else {
                    f64::INFINITY
                }
            }
            Signal::Sum { terms } => terms.iter().map(Signal::sup_abs).sum(),
        }
    }

    /// Single sinusoid parameters `(amplitude, omega, phase)` when the signal is a pure one.
    pub fn as_pure_sinusoid(&self) -> Option<(f64, f64, f64)> {
        match self {
            Signal::Sinusoid { amplitude, omega, phase, offset } if *offset == 0.0 => Some((*amplitude, *omega, *phase)),
            _ => None,
        }
    }
}

impl Default for Signal {
    fn default() -> Self {
        Signal::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_primitives() {
        let u = Signal::ExpSum { terms: vec![[1.0, 2.0], [1.0, 1.5]] };
        assert_eq!(u.eval(0.0), 2.0);
        assert!((u.eval(1.0) - ((-2.0f64).exp() + (-1.5f64).exp())).abs() < 1e-15);
        let p = Signal::Pulse { level: 1.0, until: 4.0 };
        assert_eq!((p.eval(4.0), p.eval(4.0001)), (1.0, 0.0));
        assert_eq!(Signal::InverseQuadratic { c: 1.0, b: 0.2 }.eval(0.0), 5.0);
        let r = Signal::Sinusoid { amplitude: 18.5, omega: 16.1, phase: 0.0, offset: 0.3 };
        assert_eq!(r.eval(0.0), 0.3);
        assert!((r.sup_abs() - 18.8).abs() < 1e-12);
    }
}
