use interlace::excitation::{check_identifiability, check_ie, ie_gramian, RegressorTrace};
use interlace::gd_estimator::{drem_operator_step, gd_step_dt, run_gd, DremOperatorState, GainSchedule, GdConfig, GdState};
use interlace::lre::{LreSample, LreSource};
use interlace::mrac::Plant;
use interlace::nlpre::{check_p_monotone, run_nlpre_with, MonotoneMap, NlpreConfig};
use interlace::numcore::{adjugate, det, lambda_min_sym, rk4_step, StepInput, TimeGrid};
use interlace::robust_reject::{run_perturbed_gd, Disturbance, PerturbedLre, RobustGainSchedule};
use interlace::{Mat, Mode, Vector};
use proptest::prelude::*;

/// Replays a fixed table of samples; in CT each step holds its start sample.
struct Replay {
    samples: Vec<LreSample>,
    theta: Option<Vector>,
    k: usize,
}

impl Replay {
    fn new(samples: Vec<LreSample>, theta: Option<Vector>) -> Self {
        Self { samples, theta, k: 0 }
    }
}

impl LreSource for Replay {
    fn dim(&self) -> usize {
        self.samples[0].phi.len()
    }
    fn true_theta(&self) -> Option<Vector> {
        self.theta.clone()
    }
    fn advance(&mut self, _t: f64, _h: f64) -> interlace::Result<StepInput<LreSample>> {
        let a = self.samples[self.k.min(self.samples.len() - 1)].clone();
        let b = self.samples[(self.k + 1).min(self.samples.len() - 1)].clone();
        self.k += 1;
        Ok(StepInput { start: a.clone(), mid: a, end: b })
    }
}

fn square(q: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-2.0..2.0f64, q * q).prop_map(move |v| Mat::from_row_slice(q, q, &v))
}

fn samples(q: usize, n: usize, theta: Vector) -> impl Strategy<Value = Vec<LreSample>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, q), n).prop_map(move |rows| {
        rows.into_iter()
            .map(|r| {
                let phi = Vector::from_vec(r);
                let y = phi.dot(&theta);
                LreSample { phi, y }
            })
            .collect()
    })
}

/// Orthonormal basis from a random square matrix (Gram-Schmidt with a fallback to `e_i`).
fn basis(m: &Mat) -> Vec<Vector> {
    let q = m.nrows();
    let mut out: Vec<Vector> = Vec::new();
    for c in 0..q {
        let mut v = m.column(c).into_owned() + Vector::from_fn(q, |r, _| if r == c { 3.0 } else { 0.0 });
        for b in &out {
            v -= b * b.dot(&v);
        }
        out.push(v.normalize());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cayley_identity(q in 1usize..=6, seed in square(6)) {
        let m = seed.view((0, 0), (q, q)).into_owned();
        let adj = adjugate(&m).unwrap();
        let d = det(&m).unwrap();
        let lhs = &adj * &m - Mat::identity(q, q) * d;
        let scale = 1.0 + m.amax().powi(q as i32);
        prop_assert!(lhs.amax() <= 1e-9 * scale, "residual {}", lhs.amax());
    }

    #[test]
    fn det_of_adjugate(q in 1usize..=5, seed in square(5)) {
        let m = seed.view((0, 0), (q, q)).into_owned();
        let d = det(&m).unwrap();
        prop_assume!(d.abs() > 1e-3);
        let lhs = det(&adjugate(&m).unwrap()).unwrap();
        let rhs = d.powi(q as i32 - 1);
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn gramian_psd_and_monotone(q in 1usize..=3, rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 2..40)) {
        let n = rows.len();
        let s: Vec<Vector> = rows.iter().map(|r| Vector::from_column_slice(&r[..q])).collect();
        let tr = RegressorTrace::new(TimeGrid::new(0.0, 0.1, n - 1).unwrap(), Mode::Continuous, s).unwrap();
        let mut prev = Mat::zeros(q, q);
        for k in 0..n {
            let g = ie_gramian(&tr, k).unwrap();
            prop_assert!(lambda_min_sym(&g).unwrap() >= -1e-12);
            prop_assert!(lambda_min_sym(&(&g - &prev)).unwrap() >= -1e-10);
            prev = g;
        }
    }

    #[test]
    fn ie_iff_identifiable(
        q in 1usize..=3,
        rot in square(3),
        rank in 0usize..=3,
        seg in prop::collection::vec((0usize..3, 0.5..2.0f64, 2usize..6), 1..12),
        discrete in any::<bool>(),
    ) {
        let b = basis(&rot.view((0, 0), (q, q)).into_owned());
        let r = rank.min(q);
        let mut s = Vec::new();
        for (i, c, len) in seg {
            let v = if r == 0 { Vector::zeros(q) } else { &b[i % r] * c };
            s.extend(std::iter::repeat_n(v, len));
        }
        let n = s.len();
        let (grid, mode) = if discrete {
            (TimeGrid::discrete(n - 1), Mode::Discrete)
        } else {
            (TimeGrid::new(0.0, 0.05, n - 1).unwrap(), Mode::Continuous)
        };
        let tr = RegressorTrace::new(grid, mode, s).unwrap();
        let ie = check_ie(&tr, 1e-6).unwrap().excited;
        let (ident, _) = check_identifiability(&tr, 1e-8).unwrap();
        prop_assert_eq!(ie, ident);
    }

    #[test]
    fn dt_contraction_is_monotone(
        th in prop::collection::vec(-5.0..5.0f64, 2),
        data in samples(2, 40, Vector::zeros(2)),
        gamma in 0.1..10.0f64,
        gg in 0.1..10.0f64,
        init in prop::collection::vec(-5.0..5.0f64, 2),
    ) {
        let theta = Vector::from_vec(th);
        let data: Vec<LreSample> = data.into_iter().map(|s| LreSample { y: s.phi.dot(&theta), phi: s.phi }).collect();
        let cfg = GdConfig::new(2, gamma, GainSchedule::constant(gg), Mode::Discrete)
            .with_initial(Vector::zeros(2), Vector::from_vec(init));
        let mut st = GdState::new(&cfg);
        for (k, smp) in data.iter().enumerate() {
            let next = gd_step_dt(&st, smp, k, &cfg).unwrap();
            for i in 0..2 {
                prop_assert!((next.theta[i] - theta[i]).abs() <= (st.theta[i] - theta[i]).abs() * (1.0 + 1e-12) + 1e-12);
            }
            st = next;
        }
    }

    #[test]
    fn dt_identities_and_envelope(
        th in prop::collection::vec(-5.0..5.0f64, 2),
        data in samples(2, 30, Vector::zeros(2)),
        g0 in prop::collection::vec(-1.0..1.0f64, 2),
    ) {
        let theta = Vector::from_vec(th);
        let data: Vec<LreSample> = data.into_iter().map(|s| LreSample { y: s.phi.dot(&theta), phi: s.phi }).collect();
        let gamma = 2.0;
        let cfg = GdConfig::new(2, gamma, GainSchedule::constant(1.0), Mode::Discrete)
            .with_initial(Vector::from_vec(g0), Vector::zeros(2));
        let mut st = GdState::new(&cfg);
        let mut prod = 1.0;
        let mut expo = 0.0;
        let e0 = (&st.theta - &theta).amax();
        for (k, smp) in data.iter().enumerate() {
            let d = st.derived(&cfg).unwrap();
            let ext = &d.d_mat * &theta - (&st.theta_g - &st.phi * &cfg.theta_g0);
            prop_assert!(ext.amax() <= 1e-12 * (1.0 + theta.amax()));
            let mix = &d.y - &theta * d.delta;
            prop_assert!(mix.amax() <= 1e-12 * (1.0 + theta.amax()));
            let ratio = gamma / (gamma + d.delta * d.delta);
            prod *= ratio;
            expo += d.delta * d.delta / (gamma + d.delta * d.delta);
            prop_assert!(prod <= (-expo).exp() * (1.0 + 1e-12));
            st = gd_step_dt(&st, smp, k, &cfg).unwrap();
            prop_assert!((&st.theta - &theta).amax() <= prod * e0 * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn operator_is_linear(
        data in samples(2, 60, Vector::zeros(2)),
        d1 in prop::collection::vec(-1.0..1.0f64, 60),
        d2 in prop::collection::vec(-1.0..1.0f64, 60),
    ) {
        let cfg = GdConfig::new(2, 1.0, GainSchedule::constant(3.0), Mode::Continuous);
        let drive = |d: &dyn Fn(usize) -> f64| {
            let mut op = DremOperatorState::new(2);
            for k in 0..59 {
                let a = LreSample { phi: data[k].phi.clone(), y: d(k) };
                let b = LreSample { phi: data[k + 1].phi.clone(), y: d(k + 1) };
                let inp = StepInput { start: a.clone(), mid: a, end: b };
                op = drem_operator_step(&op, &inp, k as f64 * 0.01, 0.01, &cfg).unwrap();
            }
            op.x_y
        };
        let s1 = drive(&|k| d1[k]);
        let s2 = drive(&|k| d2[k]);
        let s12 = drive(&|k| d1[k] + d2[k]);
        prop_assert!((s12 - s1 - s2).amax() <= 1e-9);
    }

    #[test]
    fn zero_disturbance_reduces_to_plain_run(
        th in prop::collection::vec(-3.0..3.0f64, 2),
        data in samples(2, 50, Vector::zeros(2)),
        discrete in any::<bool>(),
    ) {
        let theta = Vector::from_vec(th);
        let data: Vec<LreSample> = data.into_iter().map(|s| LreSample { y: s.phi.dot(&theta), phi: s.phi }).collect();
        let (mode, grid, sched) = if discrete {
            (Mode::Discrete, TimeGrid::discrete(49), GainSchedule::QuadraticGrowth { c0: 1.0, c2: 1.0 })
        } else {
            (Mode::Continuous, TimeGrid::new(0.0, 0.01, 49).unwrap(), GainSchedule::InverseQuadratic { c: 5.0, b: 1.0 })
        };
        let cfg = GdConfig::new(2, 4.0, sched.clone(), mode).with_initial(Vector::from_element(2, 0.3), Vector::zeros(2));
        let plain = run_gd(&mut Replay::new(data.clone(), Some(theta.clone())), &cfg, &grid).unwrap();
        let mut perturbed = PerturbedLre::new(Replay::new(data, Some(theta)), Disturbance::None).unwrap();
        let rep = run_perturbed_gd(&mut perturbed, &RobustGainSchedule::new(sched, mode).unwrap(), &cfg, &grid).unwrap();
        prop_assert_eq!(plain.theta, rep.trace.theta);
        prop_assert_eq!(plain.delta, rep.trace.delta);
    }

    #[test]
    fn identity_map_reduces_to_gd(
        th in prop::collection::vec(-3.0..3.0f64, 2),
        data in samples(2, 200, Vector::zeros(2)),
    ) {
        let theta = Vector::from_vec(th);
        let data: Vec<LreSample> = data.into_iter().map(|s| LreSample { y: s.phi.dot(&theta), phi: s.phi }).collect();
        let grid = TimeGrid::new(0.0, 0.01, 199).unwrap();
        let g0 = Vector::from_vec(vec![0.2, -0.1]);
        let t0 = Vector::from_vec(vec![0.5, 0.5]);
        let cfg = GdConfig::new(2, 5.0, GainSchedule::constant(2.0), Mode::Continuous).with_initial(g0.clone(), t0.clone());
        let plain = run_gd(&mut Replay::new(data.clone(), None), &cfg, &grid).unwrap();
        let ncfg = NlpreConfig { gamma: 5.0, gamma_g: GainSchedule::constant(2.0), theta_g0: g0, theta0: t0, map: MonotoneMap::identity(2) };
        let mut nl = Vec::new();
        run_nlpre_with(&mut Replay::new(data, None), &ncfg, &grid, |p| nl.push(p.state.theta.clone())).unwrap();
        prop_assert_eq!(nl.len(), plain.theta.len());
        for (a, b) in nl.iter().zip(&plain.theta) {
            prop_assert!((a - b).amax() <= 1e-10);
        }
    }

    #[test]
    fn theta_mu_symmetric_jacobian_is_exact(a in -50.0..50.0f64, b in -50.0..50.0f64) {
        let m = MonotoneMap::theta_mu();
        prop_assert_eq!(m.symmetric_jacobian(&[a, b]), Mat::identity(2, 2) * 2.0);
    }

    #[test]
    fn non_hurwitz_numerator_is_rejected(z in 0.0..5.0f64) {
        prop_assert!(Plant::new(2.0, vec![1.0, -z], vec![1.0, 1.0, 1.0], None).is_err());
        prop_assert!(Plant::new(2.0, vec![1.0, z + 1e-3], vec![1.0, 1.0, 1.0], None).is_ok());
    }
}

#[test]
fn rk4_is_fourth_order() {
    let solve = |n: usize| {
        let h = 1.0 / n as f64;
        let mut x = vec![1.0];
        for k in 0..n {
            x = rk4_step(|_, x, dx| dx[0] = -x[0], k as f64 * h, &x, h).unwrap();
        }
        (x[0] - (-1.0f64).exp()).abs()
    };
    for n in [5, 10, 20, 40] {
        assert!(solve(n) / solve(2 * n) >= 14.0);
    }
}

#[test]
fn frozen_while_unexcited() {
    let theta = Vector::from_vec(vec![1.0, 2.0]);
    let zero = LreSample::zeros(2);
    let t0 = Vector::from_vec(vec![-0.7, 0.3]);
    let cfg = GdConfig::new(2, 1.0, GainSchedule::constant(1.0), Mode::Discrete).with_initial(Vector::zeros(2), t0.clone());
    let tr = run_gd(&mut Replay::new(vec![zero.clone(); 30], Some(theta.clone())), &cfg, &TimeGrid::discrete(29)).unwrap();
    assert!(tr.theta.iter().all(|t| *t == t0));
    let cfg = GdConfig { mode: Mode::Continuous, ..cfg };
    let tr = run_gd(&mut Replay::new(vec![zero; 30], Some(theta)), &cfg, &TimeGrid::new(0.0, 0.01, 29).unwrap()).unwrap();
    for (t, d) in tr.theta.iter().zip(&tr.delta) {
        assert!(d.abs() < 1e-14);
        assert_eq!(*t, t0);
    }
}

#[test]
fn monotone_certificate_on_theta_mu() {
    let rep = check_p_monotone(&MonotoneMap::theta_mu(), &[-10.0, -10.0], &[10.0, 10.0], 10_000, 7).unwrap();
    assert!(rep.passes);
    assert_eq!(rep.jac_lambda_min, 2.0);
}
