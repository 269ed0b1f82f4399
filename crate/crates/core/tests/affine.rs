use nonholonomic::affine::*;
use nonholonomic::integrate::IntegratorConfig;
use nonholonomic::{Matrix, Vector};
use proptest::prelude::*;

fn square(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, n * n).prop_map(move |e| Matrix::from_row_slice(n, n, &e))
}

/// Random deformation with `det φ > 0`, flipping a row when needed.
fn deformation(n: usize) -> impl Strategy<Value = Matrix> {
    square(n, -2.0, 2.0).prop_map(|mut m| {
        if m.determinant() < 0.0 {
            m.row_mut(0).neg_mut();
        }
        m
    })
}

fn spd(n: usize) -> impl Strategy<Value = Matrix> {
    square(n, -0.7, 0.7).prop_map(move |b| &b * b.transpose() + Matrix::identity(n, n) * 0.5)
}

fn symmetric(n: usize) -> impl Strategy<Value = Matrix> {
    square(n, -1.0, 1.0).prop_map(|b| (&b + b.transpose()) * 0.5)
}

fn dims() -> impl Strategy<Value = usize> {
    prop_oneof![Just(2usize), Just(3usize)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn polar_invariants(case in dims().prop_flat_map(|n| (deformation(n), spd(n), spd(n)))) {
        let (phi, g, eta) = case;
        prop_assume!(phi.determinant() > 0.05);
        let p = polar_decompose(&phi, &g, &eta).unwrap();
        prop_assert!((&p.u * &p.a - &phi).amax() < 1e-10);
        prop_assert!((p.u.transpose() * &g * &p.u - &eta).amax() < 1e-10);
        let s = &eta * &p.a;
        prop_assert!((&s - s.transpose()).amax() < 1e-10);
        prop_assert!(s.symmetric_eigen().eigenvalues.min() > 0.0);
        // A is η-self-adjoint, so its spectrum is real and positive.
        let ev = p.a.complex_eigenvalues();
        prop_assert!(ev.iter().all(|z| z.re > 0.0 && z.im.abs() < 1e-8));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn substitution_identity_holds(case in dims().prop_flat_map(|n| (spd(n), symmetric(n), spd(n), spd(n)))) {
        let (a, a_dot, j, eta) = case;
        let w = omega_hat_from_constraint(&a, &a_dot).unwrap();
        let lhs = kinetic_internal(&a, &a_dot, &w, &j, &eta);
        let rhs = vakonomic_kinetic(&a, &a_dot, &j, &eta).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-300));
    }

    #[test]
    fn green_tensor_is_left_rotation_invariant(case in dims().prop_flat_map(|n| (deformation(n), square(n, -1.0, 1.0), spd(n)))) {
        let (phi, k, g) = case;
        prop_assume!(phi.determinant() > 0.05);
        // g-orthogonal R = g^{-1/2} exp(skew) g^{1/2}
        let skew = (&k - k.transpose()) * 0.5;
        let eig = g.clone().symmetric_eigen();
        let half = &eig.eigenvectors * Matrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
        let r = half.clone().try_inverse().unwrap() * skew.exp() * &half;
        prop_assert!((r.transpose() * &g * &r - &g).amax() < 1e-10);
        let g0 = green_tensor(&phi, &g);
        let g1 = green_tensor(&(&r * &phi), &g);
        prop_assert!((&g0 - &g1).amax() < 1e-10 * (1.0 + g0.amax()));
        prop_assert!((&g0 - g0.transpose()).amax() < 1e-12 * (1.0 + g0.amax()));
        prop_assert!(g0.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn rotator_angular_velocity_is_skew(case in dims().prop_flat_map(|n| (square(n, -1.0, 1.0), square(n, -1.0, 1.0), 0.0..2.0f64))) {
        let (k0, k1, t) = case;
        let (k0, k1) = ((&k0 - k0.transpose()) * 0.5, (&k1 - k1.transpose()) * 0.5);
        let u = |s: f64| (&k1 * s).exp() * k0.exp();
        let h = 1e-5;
        let u_dot = (u(t + h) - u(t - h)) / (2.0 * h);
        let n = k0.nrows();
        let id = Matrix::identity(n, n);
        let w = omega_hat_from_rotator(&u(t), &u_dot, &id, &id).unwrap();
        prop_assert!((&w + w.transpose()).amax() < 1e-8);
    }

    #[test]
    fn rotation_less_paths_follow_commutator(case in dims().prop_flat_map(|n| (spd(n), symmetric(n), 0.1..1.0f64))) {
        let (phi0, s, t) = case;
        // φ̇ = Sφ with S symmetric keeps Ω symmetric.
        let phi = |x: f64| (&s * x).exp() * &phi0;
        let n = s.nrows();
        let id = Matrix::identity(n, n);
        let h = 1e-5;
        let p = polar_decompose(&phi(t), &id, &id).unwrap();
        let pp = polar_decompose(&phi(t + h), &id, &id).unwrap();
        let pm = polar_decompose(&phi(t - h), &id, &id).unwrap();
        let u_dot = (&pp.u - &pm.u) / (2.0 * h);
        let a_dot = (&pp.a - &pm.a) / (2.0 * h);
        let from_rotator = omega_hat_from_rotator(&p.u, &u_dot, &id, &id).unwrap();
        let from_constraint = omega_hat_from_constraint(&p.a, &a_dot).unwrap();
        prop_assert!((from_rotator - from_constraint).amax() < 1e-6);
    }
}

fn diag(d: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(d))
}

fn aniso_init(body: &InertiaData) -> AffineConfiguration {
    let a = diag(&[1.2, 0.9]);
    let a_dot = Matrix::from_row_slice(2, 2, &[0.1, 0.3, 0.3, -0.2]);
    AffineConfiguration::from_symmetric(body, &a, &a_dot).unwrap()
}

fn final_green(body: &InertiaData, pot: &GreenPotential, f: AffineFormulation, init: &AffineConfiguration, dt: f64) -> Matrix {
    let run = simulate_affine(body, pot, f, init, &IntegratorConfig::new(dt, 1.0).unwrap()).unwrap();
    assert!(run.result.is_completed(), "{:?}", run.result.status);
    run.green.last().unwrap().clone()
}

#[test]
fn isotropic_dilatation_agrees() {
    let body = InertiaData::isotropic(2);
    let pot = GreenPotential::saint_venant(1.0, &body.eta).unwrap();
    let init = AffineConfiguration::from_symmetric(&body, &Matrix::identity(2, 2), &(Matrix::identity(2, 2) * 0.2)).unwrap();
    let vak = simulate_affine(&body, &pot, AffineFormulation::Vakonomic, &init, &IntegratorConfig::new(1e-3, 1.0).unwrap()).unwrap();
    let dal = simulate_affine(&body, &pot, AffineFormulation::Dalembert, &init, &IntegratorConfig::new(1e-3, 1.0).unwrap()).unwrap();
    for (gv, gd) in vak.green.iter().zip(&dal.green) {
        assert!((gv - gd).amax() < 1e-12);
        // pure dilatation: G stays a multiple of the identity
        assert!(gv[(0, 1)].abs() < 1e-14 && (gv[(0, 0)] - gv[(1, 1)]).abs() < 1e-14);
    }
    for s in &dal.result.samples {
        assert!(s.reaction.amax() < 1e-12);
    }
}

#[test]
fn anisotropic_runs_do_not_commute() {
    let body = InertiaData::isotropic(2);
    let pot = GreenPotential::saint_venant(1.0, &body.eta).unwrap();
    let init = aniso_init(&body);
    let mut error = 0.0f64;
    let mut g = Vec::new();
    for f in [AffineFormulation::Vakonomic, AffineFormulation::Dalembert] {
        let coarse = final_green(&body, &pot, f, &init, 1e-3);
        let fine = final_green(&body, &pot, f, &init, 5e-4);
        error = error.max((&coarse - &fine).amax());
        g.push(fine);
    }
    let gap = (&g[0] - &g[1]).amax();
    assert!(gap > 10.0 * error, "gap {gap:e} vs integrator error {error:e}");
    assert!(gap > 1e-3);
}

#[test]
fn energies_are_conserved_and_constraint_holds() {
    let body = InertiaData::isotropic(2);
    let pot = GreenPotential::saint_venant(1.0, &body.eta).unwrap();
    let a = Matrix::from_row_slice(2, 2, &[1.05, 0.02, 0.02, 0.97]);
    let a_dot = Matrix::from_row_slice(2, 2, &[0.01, 0.03, 0.03, -0.02]);
    let init = AffineConfiguration::from_symmetric(&body, &a, &a_dot).unwrap();
    let cfg = IntegratorConfig::new(1e-3, 10.0).unwrap();
    for f in [AffineFormulation::Vakonomic, AffineFormulation::Dalembert] {
        let run = simulate_affine(&body, &pot, f, &init, &cfg).unwrap();
        assert!(run.result.is_completed());
        assert!(run.result.energy_drift < 1e-6, "{f:?}: {:e}", run.result.energy_drift);
        for g in &run.green {
            assert!((g - g.transpose()).amax() < 1e-12);
            assert!(g.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        }
        if f == AffineFormulation::Dalembert {
            let n = 2;
            for s in &run.result.samples {
                let phi = Matrix::from_row_slice(n, n, &s.q.as_slice()[n..]);
                let phi_dot = Matrix::from_row_slice(n, n, &s.v.as_slice()[n..]);
                let (omega, _) = affine_velocity(&phi, &phi_dot).unwrap();
                assert!(symmetry_residual(&omega, &body.g).unwrap().amax() < 1e-6);
            }
        }
    }
}

#[test]
fn translation_decouples() {
    let body = InertiaData::isotropic(2);
    let pot = GreenPotential::saint_venant(1.0, &body.eta).unwrap();
    let init = aniso_init(&body)
        .with_translation(Vector::from_vec(vec![1.0, -2.0]), Vector::from_vec(vec![0.5, 0.25]))
        .unwrap();
    for f in [AffineFormulation::Vakonomic, AffineFormulation::Dalembert] {
        let run = simulate_affine(&body, &pot, f, &init, &IntegratorConfig::new(1e-2, 1.0).unwrap()).unwrap();
        let last = run.result.last().unwrap();
        assert!((last.q[0] - 1.5).abs() < 1e-12 && (last.q[1] + 1.75).abs() < 1e-12);
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let flip = diag(&[-1.0, 1.0]);
    let z = Vector::zeros(2);
    assert!(AffineConfiguration::new(z.clone(), flip, z.clone(), Matrix::zeros(2, 2)).is_err());
    assert!(InertiaData::new(1.0, diag(&[1.0, -1.0]), Matrix::identity(2, 2), Matrix::identity(2, 2)).is_err());
    assert!(InertiaData::new(0.0, Matrix::identity(2, 2), Matrix::identity(2, 2), Matrix::identity(2, 2)).is_err());
    let body = InertiaData::isotropic(2);
    let skew = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    assert!(AffineConfiguration::from_symmetric(&body, &Matrix::identity(2, 2), &skew).is_err());
}
