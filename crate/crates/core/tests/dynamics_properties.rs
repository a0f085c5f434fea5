use koopman_rkhs::dynamics::{
    characteristic_identity_residual, flow, linearize, nonlinear_part, Direction, IntegratorConfig,
    SystemDef,
};
use koopman_rkhs::grid::uniform_grid;

fn decay_error(dt: f64) -> f64 {
    let sys = SystemDef::new("decay", 1, |x, o| o[0] = -x[0]).unwrap();
    let cfg = IntegratorConfig::from_step(dt, 1.0).unwrap();
    let end = flow(&sys, &[1.0], &cfg, Direction::Forward)
        .unwrap()
        .final_state()[0];
    (end - (-1.0f64).exp()).abs()
}

#[test]
fn rk4_error_ratio_under_step_halving() {
    for dt in [0.1, 0.05, 0.025] {
        let ratio = decay_error(dt) / decay_error(dt / 2.0);
        assert!((12.0..=20.0).contains(&ratio), "dt={dt}: ratio {ratio}");
    }
}

#[test]
fn flow_semigroup_on_linear_system() {
    let sys = SystemDef::linear_test(-0.7, 1.3);
    let x0 = [0.4, -0.25];
    let dt = 1e-3;
    let whole = flow(
        &sys,
        &x0,
        &IntegratorConfig::from_step(dt, 1.5).unwrap(),
        Direction::Forward,
    )
    .unwrap();
    let first = flow(
        &sys,
        &x0,
        &IntegratorConfig::from_step(dt, 0.6).unwrap(),
        Direction::Forward,
    )
    .unwrap();
    let second = flow(
        &sys,
        first.final_state(),
        &IntegratorConfig::from_step(dt, 0.9).unwrap(),
        Direction::Forward,
    )
    .unwrap();
    let exact = [0.4 * (-0.7f64 * 1.5).exp(), -0.25 * (1.3f64 * 1.5).exp()];
    let single_err = (0..2)
        .map(|i| (whole.final_state()[i] - exact[i]).abs())
        .fold(0.0, f64::max);
    let split_gap = (0..2)
        .map(|i| (whole.final_state()[i] - second.final_state()[i]).abs())
        .fold(0.0, f64::max);
    assert!(
        split_gap <= 5.0 * single_err.max(1e-15),
        "gap {split_gap}, single-run error {single_err}"
    );
}

#[test]
fn backward_flow_inverts_forward_flow() {
    let sys = SystemDef::duffing(0.5, -1.0, 1.0);
    let cfg = IntegratorConfig::from_step(1e-3, 1.0).unwrap();
    let fwd = flow(&sys, &[0.3, -0.2], &cfg, Direction::Forward).unwrap();
    let back = flow(&sys, fwd.final_state(), &cfg, Direction::Backward).unwrap();
    assert!((back.final_state()[0] - 0.3).abs() < 1e-10);
    assert!((back.final_state()[1] + 0.2).abs() < 1e-10);
}

#[test]
fn left_eigenvector_residuals() {
    for sys in [
        SystemDef::cubic1d(),
        SystemDef::poly2d(-1.0, 3.0),
        SystemDef::poly2d(-0.5, 2.0),
        SystemDef::duffing(0.5, -1.0, 1.0),
        SystemDef::linear_test(-1.0, 2.0),
    ] {
        let lin = linearize(&sys).unwrap();
        let e_inf = lin
            .jacobian
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        for i in 0..lin.eigenvalues.len() {
            assert!(
                lin.left_residual(i) <= 1e-10 * e_inf,
                "{}: pair {i}",
                sys.name()
            );
            let w = &lin.left_eigenvectors[i];
            let peak = w
                .iter()
                .copied()
                .fold(0.0_f64, |m, c| if c.abs() > m.abs() { c } else { m });
            assert_eq!(peak, 1.0);
        }
        assert!(lin.eigenvalues.windows(2).all(|p| p[0] > p[1]));
    }
}

#[test]
fn nonlinear_part_vanishes_for_linear_systems() {
    let sys = SystemDef::linear_test(-1.5, 0.5);
    let lin = linearize(&sys).unwrap();
    for p in uniform_grid(&[-2.0, -2.0], &[2.0, 2.0], &[11, 11]).unwrap() {
        let v = nonlinear_part(&sys, &lin, &p).unwrap();
        assert!(v.iter().all(|c| c.abs() <= 1e-12));
    }
}

#[test]
fn poly2d_reference_eigenfunctions_follow_characteristics() {
    let sys = SystemDef::poly2d(-1.0, 3.0);
    for pair in sys.reference_eigenpairs() {
        for x0 in uniform_grid(&[-0.5, -0.5], &[0.5, 0.5], &[5, 5]).unwrap() {
            let phi = |x: &[f64]| (pair.phi)(x);
            let r =
                characteristic_identity_residual(&sys, &phi, pair.lambda, &x0, 0.5, 1e-3).unwrap();
            assert!(r <= 1e-4, "lambda={} x0={x0:?}: {r}", pair.lambda);
            let r =
                characteristic_identity_residual(&sys, &phi, pair.lambda, &x0, -0.5, 1e-3).unwrap();
            assert!(r <= 1e-4, "lambda={} x0={x0:?} backward: {r}", pair.lambda);
        }
    }
}

#[test]
fn cubic_reference_follows_characteristics() {
    let sys = SystemDef::cubic1d();
    let pair = &sys.reference_eigenpairs()[0];
    for x0 in [-0.8, -0.3, 0.2, 0.6] {
        let r = characteristic_identity_residual(
            &sys,
            &|x: &[f64]| (pair.phi)(x),
            1.0,
            &[x0],
            0.7,
            1e-3,
        )
        .unwrap();
        assert!(r <= 1e-4, "{x0}: {r}");
    }
}

#[test]
fn field_is_parameterized_as_named() {
    let sys = SystemDef::poly2d(-0.5, 2.0);
    let lin = linearize(&sys).unwrap();
    assert!((lin.eigenvalues[0] - 2.0).abs() < 1e-14 && (lin.eigenvalues[1] + 0.5).abs() < 1e-14);
    let pair = sys.reference_for(2.0).unwrap();
    let r = characteristic_identity_residual(
        &sys,
        &|x: &[f64]| (pair.phi)(x),
        2.0,
        &[0.2, -0.3],
        0.4,
        1e-3,
    )
    .unwrap();
    assert!(r <= 1e-4);
}
