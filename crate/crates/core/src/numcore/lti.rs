use super::ode::{rk4_step_nodes, StepInput};
use super::{poly, Mat, Vector};
use crate::{Error, Result};

/// Continuous-time state-space system `x' = Ax + Bu`, `y = Cx + Du` with its own state.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiFilter {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub x: Vector,
}

impl LtiFilter {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        let ok = a.ncols() == n
            && b.nrows() == n
            && c.ncols() == n
            && d.nrows() == c.nrows()
            && d.ncols() == b.ncols();
        if !ok {
            return Err(Error::Dimension(format!(
                "inconsistent realization: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(Self { x: Vector::zeros(n), a, b, c, d })
    }

    /// Static gain `y = k u` with no state.
    pub fn gain(k: f64) -> Self {
        Self {
            a: Mat::zeros(0, 0),
            b: Mat::zeros(0, 1),
            c: Mat::zeros(1, 0),
            d: Mat::from_element(1, 1, k),
            x: Vector::zeros(0),
        }
    }

    /// Controllable-canonical realization of `num(𝒫)/den(𝒫)`.
    ///
    /// Coefficients are in descending powers; the denominator is normalized
    /// to be monic. The states are `v/den, 𝒫v/den, …` for input `v`.
    pub fn realize_rational(num: &[f64], den: &[f64]) -> Result<Self> {
        let den = poly::trim(den);
        let num = poly::trim(num);
        let n = den.len() - 1;
        if den[0] == 0.0 {
            return Err(Error::Domain("denominator is identically zero".into()));
        }
        if n == 0 {
            return Err(Error::Domain("denominator must have degree at least one".into()));
        }
        let m = num.len() - 1;
        if m > n {
            return Err(Error::Improper { num: m, den: n });
        }
        let lead = den[0];
        let den: Vec<f64> = den.iter().map(|c| c / lead).collect();
        // numerator padded to n+1 descending coefficients
        let mut nb = vec![0.0; n + 1];
        for (i, c) in num.iter().enumerate() {
            nb[n - m + i] = c / lead;
        }
        let feed = nb[0];

        let mut a = Mat::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            // den = p^n + den[1] p^{n-1} + ... + den[n]
            a[(n - 1, j)] = -den[n - j];
        }
        let mut b = Mat::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let mut c = Mat::zeros(1, n);
        for j in 0..n {
            c[(0, j)] = nb[n - j] - feed * den[n - j];
        }
        let d = Mat::from_element(1, 1, feed);
        Self::new(a, b, c, d)
    }

    /// Realization of `1/den(𝒫)` whose outputs are the whole state chain
    /// `v/den, 𝒫v/den, …, 𝒫^{n-1}v/den`.
    pub fn state_chain(den: &[f64]) -> Result<Self> {
        let base = Self::realize_rational(&[1.0], den)?;
        let n = base.order();
        Self::new(base.a, base.b, Mat::identity(n, n), Mat::zeros(n, 1))
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d.iter().all(|&v| v == 0.0)
    }

    pub fn reset(&mut self) {
        self.x.fill(0.0);
    }

    /// `dx = A x + B u` on raw slices.
    pub fn deriv(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let n = self.order();
        let m = self.n_inputs();
        for (i, slot) in dx.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.a[(i, j)] * x[j];
            }
            for j in 0..m {
                acc += self.b[(i, j)] * u[j];
            }
            *slot = acc;
        }
    }

    /// `y = C x + D u` on raw slices.
    pub fn output_of(&self, x: &[f64], u: &[f64], y: &mut [f64]) {
        let n = self.order();
        let m = self.n_inputs();
        for (i, slot) in y.iter_mut().enumerate().take(self.n_outputs()) {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.c[(i, j)] * x[j];
            }
            for j in 0..m {
                acc += self.d[(i, j)] * u[j];
            }
            *slot = acc;
        }
    }

    pub fn output(&self, u: &[f64]) -> Vector {
        let mut y = Vector::zeros(self.n_outputs());
        self.output_of(self.x.as_slice(), u, y.as_mut_slice());
        y
    }

    /// Advances one RK4 step with `u` held over the step; returns `C x(t+h) + D u`.
    pub fn step(&mut self, u: &[f64], h: f64) -> Result<Vector> {
        self.step_at(0.0, &StepInput::held(u.to_vec()), h)
    }

    /// Scalar convenience for SISO filters.
    pub fn step_scalar(&mut self, u: f64, h: f64) -> Result<f64> {
        Ok(self.step(&[u], h)?[0])
    }

    /// Advances one RK4 step with the input given at the three stage nodes
    /// (exact samples or interpolation); returns the output at the step end.
    pub fn step_at(&mut self, t: f64, u: &StepInput<Vec<f64>>, h: f64) -> Result<Vector> {
        if u.start.len() != self.n_inputs() {
            return Err(Error::Dimension(format!(
                "filter expects {} inputs, got {}",
                self.n_inputs(),
                u.start.len()
            )));
        }
        if self.order() > 0 {
            let next = rk4_step_nodes(
                |node, _, x, dx| self.deriv(x, u.at(node), dx),
                t,
                self.x.as_slice(),
                h,
            )?;
            self.x = Vector::from_vec(next);
        }
        let y = self.output(&u.end);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { t: t + h });
        }
        Ok(y)
    }

    /// `u → self → next`.
    pub fn series(&self, next: &LtiFilter) -> Result<LtiFilter> {
        if next.n_inputs() != self.n_outputs() {
            return Err(Error::Dimension(format!(
                "cannot cascade {} outputs into {} inputs",
                self.n_outputs(),
                next.n_inputs()
            )));
        }
        let (n1, n2) = (self.order(), next.order());
        let mut a = Mat::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        let mut b = Mat::zeros(n1 + n2, self.n_inputs());
        b.view_mut((0, 0), (n1, self.n_inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.n_inputs())).copy_from(&(&next.b * &self.d));
        let mut c = Mat::zeros(next.n_outputs(), n1 + n2);
        c.view_mut((0, 0), (next.n_outputs(), n1)).copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.n_outputs(), n2)).copy_from(&next.c);
        let d = &next.d * &self.d;
        let mut out = LtiFilter::new(a, b, c, d)?;
        out.x.rows_mut(0, n1).copy_from(&self.x);
        out.x.rows_mut(n1, n2).copy_from(&next.x);
        Ok(out)
    }

    /// Independent systems side by side: inputs and outputs are concatenated.
    pub fn block_diag(parts: &[LtiFilter]) -> Result<LtiFilter> {
        let n: usize = parts.iter().map(|p| p.order()).sum();
        let m: usize = parts.iter().map(|p| p.n_inputs()).sum();
        let p: usize = parts.iter().map(|p| p.n_outputs()).sum();
        let (mut a, mut b, mut c, mut d) = (Mat::zeros(n, n), Mat::zeros(n, m), Mat::zeros(p, n), Mat::zeros(p, m));
        let mut x = Vector::zeros(n);
        let (mut io, mut ii, mut iy) = (0, 0, 0);
        for s in parts {
            let (sn, sm, sp) = (s.order(), s.n_inputs(), s.n_outputs());
            a.view_mut((io, io), (sn, sn)).copy_from(&s.a);
            b.view_mut((io, ii), (sn, sm)).copy_from(&s.b);
            c.view_mut((iy, io), (sp, sn)).copy_from(&s.c);
            d.view_mut((iy, ii), (sp, sm)).copy_from(&s.d);
            x.rows_mut(io, sn).copy_from(&s.x);
            io += sn;
            ii += sm;
            iy += sp;
        }
        let mut out = LtiFilter::new(a, b, c, d)?;
        out.x = x;
        Ok(out)
    }

    /// Same system with the raw input appended to the outputs.
    pub fn with_input_passthrough(&self) -> LtiFilter {
        let (n, m, p) = (self.order(), self.n_inputs(), self.n_outputs());
        let mut c = Mat::zeros(p + m, n);
        c.view_mut((0, 0), (p, n)).copy_from(&self.c);
        let mut d = Mat::zeros(p + m, m);
        d.view_mut((0, 0), (p, m)).copy_from(&self.d);
        d.view_mut((p, 0), (m, m)).copy_from(&Mat::identity(m, m));
        LtiFilter { a: self.a.clone(), b: self.b.clone(), c, d, x: self.x.clone() }
    }

    /// Feeds one input to every column of `self` (fan-out).
    pub fn with_shared_input(&self) -> LtiFilter {
        let sum_cols = |m: &Mat| Mat::from_fn(m.nrows(), 1, |r, _| m.row(r).sum());
        LtiFilter {
            a: self.a.clone(),
            b: sum_cols(&self.b),
            c: self.c.clone(),
            d: sum_cols(&self.d),
            x: self.x.clone(),
        }
    }

    /// Places the state on the forced periodic orbit for the single input
    /// `amp · sin(ω t + phase)` evaluated at time `t`.
    ///
    /// Solves `[[A, ωI], [-ωI, A]] [p; q] = [-amp·B; 0]` so that
    /// `x(t) = p sin(ωt+phase) + q cos(ωt+phase)`.
    pub fn set_sinusoid_steady_state(&mut self, amp: f64, omega: f64, phase: f64, t: f64) -> Result<()> {
        if self.n_inputs() != 1 {
            return Err(Error::Dimension("steady state needs a single-input filter".into()));
        }
        let n = self.order();
        let mut m = Mat::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.a);
        m.view_mut((n, n), (n, n)).copy_from(&self.a);
        for i in 0..n {
            m[(i, n + i)] = omega;
            m[(n + i, i)] = -omega;
        }
        let mut rhs = Vector::zeros(2 * n);
        for i in 0..n {
            rhs[i] = -amp * self.b[(i, 0)];
        }
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Domain(format!("filter has a pole at j{omega}")))?;
        let arg = omega * t + phase;
        for i in 0..n {
            self.x[i] = sol[i] * arg.sin() + sol[n + i] * arg.cos();
        }
        Ok(())
    }
}
