use koopman_rkhs::kernels::{default_base_kernels, gram, Kernel, KernelMixture, KernelSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_families() -> Vec<KernelSpec> {
    let mut v = default_base_kernels();
    v.push(KernelSpec::Laplacian { gamma: 0.8 });
    v.push(KernelSpec::gaussian_length_scale(0.3));
    v.push(KernelSpec::polynomial(3, 0.0));
    v
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, half: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-half..half)).collect())
        .collect()
}

#[test]
fn symmetry_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut families = smooth_families();
    families.push(KernelSpec::Singular1d);
    for k in &families {
        let d = if matches!(k, KernelSpec::Singular1d) {
            1
        } else {
            2
        };
        for _ in 0..1000 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.95..0.95)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.95..0.95)).collect();
            let a = k.eval(&x, &y).unwrap();
            let b = k.eval(&y, &x).unwrap();
            assert!((a - b).abs() <= 1e-12, "{k}");
        }
    }
}

#[test]
fn gram_psd_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in smooth_families() {
        if k.is_indefinite() {
            continue;
        }
        // The triangular kernel is positive definite only in one dimension.
        let d = if matches!(k, KernelSpec::Triangular { .. }) {
            1
        } else {
            2
        };
        for n in [5, 20, 50] {
            let pts = random_points(&mut rng, n, d, 1.5);
            let g = gram(&k, &pts).unwrap();
            let maxdiag = g.values.diagonal().amax();
            assert!(koopman_rkhs::linalg::max_asymmetry(&g.values) <= 1e-12);
            assert!(
                g.min_eigenvalue() >= -1e-8 * maxdiag,
                "{k} n={n}: {}",
                g.min_eigenvalue()
            );
        }
    }
    for n in [5, 20, 50] {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-0.95..0.95)]).collect();
        let g = gram(&KernelSpec::Singular1d, &pts).unwrap();
        assert!(g.min_eigenvalue() >= -1e-8 * g.values.diagonal().amax());
    }
}

#[test]
fn triangular_is_not_psd_in_two_dimensions() {
    // Documents why the PSD property is only asserted in 1D for this family.
    let pts = koopman_rkhs::grid::uniform_grid(&[-1.0, -1.0], &[1.0, 1.0], &[20, 20]).unwrap();
    let g = gram(&KernelSpec::Triangular { sigma: 1.0 }, &pts).unwrap();
    assert!(g.min_eigenvalue() < -1e-2);
}

#[test]
fn mixture_gram_is_linear_in_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = random_points(&mut rng, 30, 2, 1.0);
    let comps = default_base_kernels();
    let raw: Vec<f64> = (0..comps.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mix = KernelMixture::normalized(comps.clone(), &raw).unwrap();
    let gm = gram(&mix, &pts).unwrap().values;
    let mut acc = gm.clone() * 0.0;
    for (k, b) in comps.iter().zip(mix.weights()) {
        acc += gram(k, &pts).unwrap().values * *b;
    }
    assert!((gm - acc).amax() <= 1e-14 * 10.0, "entrywise linearity");
}

#[test]
fn two_gaussian_mixture() {
    let (k1, k2) = (KernelSpec::gaussian(0.5), KernelSpec::gaussian(2.0));
    let mix = KernelMixture::new(vec![k1.clone(), k2.clone()], vec![0.3, 0.7]).unwrap();
    let (x, y) = ([0.2, -0.6], [0.9, 0.1]);
    let direct = 0.3 * k1.eval(&x, &y).unwrap() + 0.7 * k2.eval(&x, &y).unwrap();
    assert!((mix.eval(&x, &y).unwrap() - direct).abs() <= 1e-15);
    let g = mix.grad_x(&x, &y).unwrap();
    let g1 = k1.grad_x(&x, &y).unwrap();
    let g2 = k2.grad_x(&x, &y).unwrap();
    for i in 0..2 {
        assert!((g[i] - (0.3 * g1[i] + 0.7 * g2[i])).abs() <= 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gradient_matches_finite_differences(
        x in prop::array::uniform2(-1.0f64..1.0),
        y in prop::array::uniform2(-1.0f64..1.0),
        idx in 0usize..14,
    ) {
        let k = &smooth_families()[idx];
        let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        // Stay away from the kinks of the radial-distance families.
        if let KernelSpec::Triangular { sigma } = k {
            prop_assume!(r > 1e-3 && (r - sigma).abs() > 1e-3);
        }
        if matches!(k, KernelSpec::Exponential { .. } | KernelSpec::Laplacian { .. }) {
            prop_assume!(r > 1e-3);
        }
        let g = k.grad_x(&x, &y).unwrap();
        let h = 1e-5;
        for i in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let fd = (k.eval(&xp, &y).unwrap() - k.eval(&xm, &y).unwrap()) / (2.0 * h);
            let scale = g[i].abs().max(1e-4);
            prop_assert!((fd - g[i]).abs() / scale <= 1e-5, "{} axis {}: {} vs {}", k, i, g[i], fd);
        }
    }

    #[test]
    fn singular_gradient_matches_finite_differences(x in -0.9f64..0.9, y in -0.9f64..0.9) {
        let k = KernelSpec::Singular1d;
        let g = k.grad_x(&[x], &[y]).unwrap()[0];
        let h = 1e-5;
        let fd = (k.eval(&[x + h], &[y]).unwrap() - k.eval(&[x - h], &[y]).unwrap()) / (2.0 * h);
        prop_assert!((fd - g).abs() / g.abs().max(1e-4) <= 1e-5);
    }
}
