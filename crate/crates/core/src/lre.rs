//! Sources of linear regression data `y = φᵀθ (+ d)`.

use crate::numcore::{poly, LtiFilter, StepInput, Vector};
use crate::signals::Signal;
use crate::{Error, Result};

/// One regression sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LreSample {
    pub phi: Vector,
    pub y: f64,
}

impl LreSample {
    pub fn zeros(q: usize) -> Self {
        Self { phi: Vector::zeros(q), y: 0.0 }
    }

    /// `y − φᵀθ`
    pub fn residual(&self, theta: &Vector) -> f64 {
        self.y - self.phi.dot(theta)
    }
}

/// A generator of regression samples along a time grid.
///
/// Continuous-time estimators consume the three RK4 nodes of each step;
/// discrete-time recursions use `start` only with `h = 1`.
pub trait LreSource {
    fn dim(&self) -> usize;

    /// Parameter vector the data is generated from, when known.
    fn true_theta(&self) -> Option<Vector>;

    /// Samples over `[t, t + h]`; internal state moves to `t + h`.
    fn advance(&mut self, t: f64, h: f64) -> Result<StepInput<LreSample>>;
}

/// Regressor entries given in closed form, `y = φᵀθ`.
#[derive(Clone, Debug)]
pub struct DirectLre {
    pub regressor: Vec<Signal>,
    pub theta: Vector,
}

impl DirectLre {
    pub fn new(regressor: Vec<Signal>, theta: Vector) -> Result<Self> {
        if regressor.len() != theta.len() || theta.is_empty() {
            return Err(Error::Dimension(format!(
                "regressor has {} entries, θ has {}",
                regressor.len(),
                theta.len()
            )));
        }
        Ok(Self { regressor, theta })
    }

    pub fn sample(&self, t: f64) -> LreSample {
        let phi = Vector::from_iterator(self.regressor.len(), self.regressor.iter().map(|s| s.eval(t)));
        let y = phi.dot(&self.theta);
        LreSample { phi, y }
    }
}

impl LreSource for DirectLre {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn true_theta(&self) -> Option<Vector> {
        Some(self.theta.clone())
    }

    fn advance(&mut self, t: f64, h: f64) -> Result<StepInput<LreSample>> {
        Ok(StepInput::sample(t, h, |s| self.sample(s)))
    }
}

/// Linear regression obtained by filtering the input and output of
/// `D(𝒫) y = N(𝒫) u` through `1/R(𝒫)` with `R` monic of degree `n = deg D`.
///
/// `φ = col(y/R, …, 𝒫^{n-1}y/R, u/R, …, 𝒫^{n-1}u/R)` and
/// `θ = col(r_0 − a_0, …, r_{n-1} − a_{n-1}, b_0, …, b_{n-1})`
/// with ascending coefficient indices.
#[derive(Clone, Debug)]
pub struct FilteredPlantLre {
    input: Signal,
    /// plant in series with the two filter chains; outputs `[φ; y]`
    bank: LtiFilter,
    theta: Vector,
    last: LreSample,
}

impl FilteredPlantLre {
    /// Coefficients in descending powers; `den` and `filter` must be monic of the same degree.
    pub fn new(num: &[f64], den: &[f64], filter: &[f64], input: Signal) -> Result<Self> {
        let den = poly::trim(den);
        let filter = poly::trim(filter);
        let num = poly::trim(num);
        let n = den.len() - 1;
        if den[0] != 1.0 || filter[0] != 1.0 {
            return Err(Error::InvalidConfig("plant and filter denominators must be monic".into()));
        }
        if filter.len() - 1 != n {
            return Err(Error::Dimension(format!(
                "filter degree {} differs from plant order {n}",
                filter.len() - 1
            )));
        }
        if num.len() > n {
            return Err(Error::InvalidConfig("plant must be strictly proper".into()));
        }
        let mut theta = Vector::zeros(2 * n);
        for i in 0..n {
            theta[i] = filter[n - i] - den[n - i];
            theta[n + i] = if i < num.len() { num[num.len() - 1 - i] } else { 0.0 };
        }

        let plant = LtiFilter::realize_rational(&num, &den)?;
        // plant with outputs (y, u), then both through the chain of 1/R
        let tee = plant.with_input_passthrough();
        let chains = LtiFilter::block_diag(&[LtiFilter::state_chain(&filter)?, LtiFilter::state_chain(&filter)?])?;
        let phi_bank = tee.series(&chains)?;
        // extra output row carrying y
        let np = plant.order();
        let mut c = crate::Mat::zeros(2 * n + 1, phi_bank.order());
        c.view_mut((0, 0), (2 * n, phi_bank.order())).copy_from(&phi_bank.c);
        c.view_mut((2 * n, 0), (1, np)).copy_from(&plant.c);
        let mut d = crate::Mat::zeros(2 * n + 1, 1);
        d[(2 * n, 0)] = plant.d[(0, 0)];
        let bank = LtiFilter::new(phi_bank.a, phi_bank.b, c, d)?;

        let last = Self::read(&bank, bank.x.as_slice(), input.eval(0.0), n);
        Ok(Self { input, bank, theta, last })
    }

    fn read(bank: &LtiFilter, x: &[f64], u: f64, n: usize) -> LreSample {
        let mut out = vec![0.0; 2 * n + 1];
        bank.output_of(x, &[u], &mut out);
        LreSample { y: out[2 * n], phi: Vector::from_column_slice(&out[..2 * n]) }
    }

    pub fn current(&self) -> &LreSample {
        &self.last
    }
}

impl LreSource for FilteredPlantLre {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn true_theta(&self) -> Option<Vector> {
        Some(self.theta.clone())
    }

    fn advance(&mut self, t: f64, h: f64) -> Result<StepInput<LreSample>> {
        let n = self.theta.len() / 2;
        let u = StepInput::sample(t, h, |s| vec![self.input.eval(s)]);
        let x0 = self.bank.x.clone();
        self.bank.step_at(t, &u, h)?;
        let x1 = self.bank.x.clone();
        // cubic Hermite midpoint keeps the stage samples fourth-order accurate
        let order = self.bank.order();
        let mut f0 = vec![0.0; order];
        let mut f1 = vec![0.0; order];
        self.bank.deriv(x0.as_slice(), &u.start, &mut f0);
        self.bank.deriv(x1.as_slice(), &u.end, &mut f1);
        let xm: Vec<f64> = (0..order)
            .map(|i| 0.5 * (x0[i] + x1[i]) + h / 8.0 * (f0[i] - f1[i]))
            .collect();
        let start = self.last.clone();
        let mid = Self::read(&self.bank, &xm, u.mid[0], n);
        let end = Self::read(&self.bank, x1.as_slice(), u.end[0], n);
        self.last = end.clone();
        Ok(StepInput { start, mid, end })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_param_plant() -> FilteredPlantLre {
        FilteredPlantLre::new(
            &[2.0, 1.0],
            &[1.0, 1.0, 2.0],
            &[1.0, 20.0, 100.0],
            Signal::ExpSum { terms: vec![[1.0, 2.0], [1.0, 1.5]] },
        )
        .unwrap()
    }

    #[test]
    fn filtered_plant_theta() {
        let lre = four_param_plant();
        assert_eq!(lre.true_theta().unwrap(), Vector::from_vec(vec![98.0, 19.0, 1.0, 2.0]));
    }

    #[test]
    fn filtered_plant_samples_satisfy_regression() {
        let mut lre = four_param_plant();
        let theta = lre.true_theta().unwrap();
        let h = 1e-3;
        let mut worst: f64 = 0.0;
        for k in 0..5000 {
            let s = lre.advance(k as f64 * h, h).unwrap();
            for node in [&s.start, &s.mid, &s.end] {
                worst = worst.max(node.residual(&theta).abs());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn filtered_plant_matches_direct_simulation() {
        // y/R for the plant output against an independent cascade
        let mut lre = four_param_plant();
        let mut cascade = LtiFilter::realize_rational(&[2.0, 1.0], &poly::mul(&[1.0, 1.0, 2.0], &[1.0, 20.0, 100.0])).unwrap();
        let input = Signal::ExpSum { terms: vec![[1.0, 2.0], [1.0, 1.5]] };
        let h = 1e-3;
        for k in 0..3000 {
            let t = k as f64 * h;
            let s = lre.advance(t, h).unwrap();
            let u = StepInput::sample(t, h, |s| vec![input.eval(s)]);
            let y = cascade.step_at(t, &u, h).unwrap()[0];
            assert!((s.end.phi[0] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_lre_dimension_check() {
        assert!(DirectLre::new(vec![Signal::zero()], Vector::zeros(2)).is_err());
    }
}
