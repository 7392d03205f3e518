use super::Vector;
use crate::{Error, Result};

/// The three time nodes an RK4 step samples its vector field at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Node {
    Start,
    Mid,
    End,
}

/// Exogenous input seen by one RK4 step at `t`, `t + h/2` and `t + h`.
///
/// Signals known only on the grid are either zero-order held
/// ([`StepInput::held`]) or linearly interpolated between consecutive samples.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput<T> {
    pub start: T,
    pub mid: T,
    pub end: T,
}

impl<T: Clone> StepInput<T> {
    pub fn held(v: T) -> Self {
        Self { start: v.clone(), mid: v.clone(), end: v }
    }

    /// Evaluates `f` at the three nodes of the step `[t, t + h]`.
    pub fn sample(t: f64, h: f64, mut f: impl FnMut(f64) -> T) -> Self {
        Self { start: f(t), mid: f(t + 0.5 * h), end: f(t + h) }
    }

    #[inline]
    pub fn at(&self, node: Node) -> &T {
        match node {
            Node::Start => &self.start,
            Node::Mid => &self.mid,
            Node::End => &self.end,
        }
    }

    pub fn map<U: Clone>(&self, mut f: impl FnMut(&T) -> U) -> StepInput<U> {
        StepInput { start: f(&self.start), mid: f(&self.mid), end: f(&self.end) }
    }
}

impl StepInput<f64> {
    pub fn linear(a: f64, b: f64) -> Self {
        Self { start: a, mid: 0.5 * (a + b), end: b }
    }
}

impl StepInput<Vector> {
    pub fn linear_vec(a: &Vector, b: &Vector) -> Self {
        Self { start: a.clone(), mid: (a + b) * 0.5, end: b.clone() }
    }
}

/// One classical RK4 step of `x' = f(t, x)`.
pub fn rk4_step<F>(mut f: F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    rk4_step_nodes(|_, t, x, dx| f(t, x, dx), t, x, h)
}

/// RK4 step whose vector field also receives the stage [`Node`], so inputs
/// given as a [`StepInput`] can be looked up without comparing times.
pub fn rk4_step_nodes<F>(mut f: F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(Node, f64, &[f64], &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let finite = |v: &[f64]| v.iter().all(|e| e.is_finite());

    f(Node::Start, t, x, &mut k1);
    if !finite(&k1) {
        return Err(Error::NumericOverflow { t });
    }
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(Node::Mid, t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(Node::Mid, t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(Node::End, t + h, &tmp, &mut k4);

    let out: Vec<f64> = (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if !finite(&out) {
        return Err(Error::NumericOverflow { t });
    }
    Ok(out)
}
