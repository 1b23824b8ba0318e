use intrinsic_core::losses::{
    content_consistency_loss, image_recon_loss, kld_loss, lsgan_d_loss, lsgan_g_loss,
    physical_loss, reflectance_smoothness_loss, total_generator_objective, GeneratorTerms,
    LossWeights, SmoothnessSigma, LOG_EPS,
};
use intrinsic_core::Error;
use intrinsic_tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::*;

fn duplicate_batch(t: &Tensor<f64>) -> Tensor<f64> {
    let mut shape = t.shape().to_vec();
    shape[0] *= 2;
    Tensor::new(shape, [t.data(), t.data()].concat()).unwrap()
}

#[test]
fn exact_matches_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = uniform(&mut rng, &MAP, -1.0, 1.0);
    assert_eq!(eval(&[c.clone(), c.clone(), c.clone()], content), 0.0);
    assert_eq!(eval(&[c.clone(), c.clone()], image_recon), 0.0);
    let z = uniform(&mut rng, &[4, 8], -2.0, 2.0);
    assert_eq!(eval(&[z.clone(), z.clone()], prior_recon), 0.0);
    assert!(eval(&[z.clone(), z.clone()], kld).abs() < 1e-15);

    let ones = Tensor::full(vec![2, 1, 4, 4], 1.0);
    let zeros = Tensor::zeros(vec![2, 1, 4, 4]);
    assert_eq!(
        eval(&[ones.clone(), ones.clone(), zeros.clone(), zeros], lsgan_d),
        0.0
    );
    assert_eq!(eval(&[ones.clone(), ones], lsgan_g), 0.0);

    let r = uniform(&mut rng, &[2, 3, 4, 4], 0.0, 1.0);
    let s = uniform(&mut rng, &[2, 1, 4, 4], 0.0, 1.0);
    let i = physical_image(&r, &s);
    assert_eq!(eval(&[i, r, s], physical), 0.0);

    let img = uniform(&mut rng, &[2, 3, 4, 4], 0.1, 1.0);
    let flat = Tensor::full(vec![2, 3, 4, 4], 0.37);
    assert_eq!(eval(&[flat, img], smooth_default), 0.0);
}

#[test]
fn constant_cases() {
    let zeros = Tensor::zeros(MAP.to_vec());
    let half = Tensor::full(MAP.to_vec(), 0.5);
    assert_eq!(eval(&[zeros.clone(), half, zeros.clone()], content), 0.5);
    assert_eq!(
        eval(
            &[zeros.clone(), Tensor::full(MAP.to_vec(), 1.0)],
            image_recon
        ),
        1.0
    );
    assert_eq!(
        eval(
            &[Tensor::zeros(vec![3, 8]), Tensor::full(vec![3, 8], 0.25)],
            prior_recon
        ),
        0.25
    );

    let i = Tensor::full(vec![1, 3, 4, 4], 1.0);
    let r = Tensor::full(vec![1, 3, 4, 4], 0.5);
    let s = Tensor::full(vec![1, 1, 4, 4], 0.5);
    assert_eq!(eval(&[i, r, s], physical), 0.75);
}

#[test]
fn kld_closed_form_half_per_dimension() {
    // Two points at +-1 give mean 0 and population variance 1.
    let d = 8;
    let pred = Tensor::from_fn(vec![2, d], |k| if k < d { -1.0 } else { 1.0 });
    let real = Tensor::from_fn(vec![2, d], |k| if k < d { 0.0 } else { 2.0 });
    let v = eval(&[pred, real], kld);
    assert!((v - 0.5).abs() < 1e-6, "{v}");
}

#[test]
fn kld_rejects_single_sample_batches() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![1, 8]));
    let b = g.constant(Tensor::zeros(vec![4, 8]));
    assert!(matches!(kld_loss(&mut g, a, b), Err(Error::Dimension(_))));
}

#[test]
fn shape_mismatches_are_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![1, 2, 4, 4]));
    let b = g.constant(Tensor::zeros(vec![1, 2, 4, 2]));
    assert!(image_recon_loss(&mut g, a, b).is_err());
    assert!(content_consistency_loss(&mut g, a, a, b).is_err());
    let s = g.constant(Tensor::zeros(vec![1, 1, 4, 2]));
    assert!(physical_loss(&mut g, a, a, s).is_err());
    assert!(lsgan_g_loss(&mut g, &[]).is_err());
    assert!(lsgan_d_loss(&mut g, &[a], &[a, a]).is_err());
}

#[test]
fn losses_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let (c, cr, cs) = (
            uniform(&mut rng, &MAP, -1.0, 1.0),
            uniform(&mut rng, &MAP, -1.0, 1.0),
            uniform(&mut rng, &MAP, -1.0, 1.0),
        );
        let want = loop_mean_abs(cr.data(), c.data()) + loop_mean_abs(cs.data(), c.data());
        assert!((eval(&[c.clone(), cr.clone(), cs], content) - want).abs() < 1e-6);
        assert!(
            (eval(&[c.clone(), cr.clone()], image_recon) - loop_mean_abs(c.data(), cr.data()))
                .abs()
                < 1e-6
        );

        let (z, zr) = (
            uniform(&mut rng, &[4, 8], -1.0, 1.0),
            uniform(&mut rng, &[4, 8], -1.0, 1.0),
        );
        assert!(
            (eval(&[z.clone(), zr.clone()], prior_recon) - loop_mean_abs(z.data(), zr.data()))
                .abs()
                < 1e-6
        );
        assert!((eval(&[z.clone(), zr.clone()], kld) - kld_oracle(&z, &zr)).abs() < 1e-6);

        let real = [
            uniform(&mut rng, &[2, 1, 4, 4], -2.0, 2.0),
            uniform(&mut rng, &[2, 1, 2, 2], -2.0, 2.0),
        ];
        let fake = [
            uniform(&mut rng, &[2, 1, 4, 4], -2.0, 2.0),
            uniform(&mut rng, &[2, 1, 2, 2], -2.0, 2.0),
        ];
        let (d_want, g_want) = lsgan_oracle(&real, &fake);
        let all = [
            real[0].clone(),
            real[1].clone(),
            fake[0].clone(),
            fake[1].clone(),
        ];
        assert!((eval(&all, lsgan_d) - d_want).abs() < 1e-6);
        assert!((eval(&fake, lsgan_g) - g_want).abs() < 1e-6);

        let i = uniform(&mut rng, &[2, 3, 4, 4], 0.0, 1.0);
        let r = uniform(&mut rng, &[2, 3, 4, 4], 0.0, 1.0);
        let s = uniform(&mut rng, &[2, 1, 4, 4], 0.0, 1.0);
        assert!(
            (eval(&[i.clone(), r.clone(), s.clone()], physical) - physical_oracle(&i, &r, &s))
                .abs()
                < 1e-6
        );

        let r = uniform(&mut rng, &[2, 3, 4, 4], 0.05, 1.0);
        for (f, sigma) in [
            (smooth_default as Loss, SmoothnessSigma::default()),
            (smooth_wide, WIDE),
        ] {
            let want = smoothness_oracle(&r, &i, &sigma.0);
            let got = eval(&[r.clone(), i.clone()], f);
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }
}

#[test]
fn smoothness_single_pair_by_hand() {
    // 1x2 image: only the horizontal pair exists and positions differ by 1.
    let img = Tensor::full(vec![1, 3, 1, 2], 0.6);
    let r = Tensor::from_fn(vec![1, 3, 1, 2], |k| if k % 2 == 0 { 0.5 } else { 1.0 });
    let sigma = SmoothnessSigma([1.0, 1.0, 0.1, 0.1, 0.1]);
    let mut g = Graph::<f64>::new();
    let (rv, iv) = (g.constant(r), g.constant(img));
    let out = reflectance_smoothness_loss(&mut g, rv, iv, &sigma).unwrap();
    // Two ordered pairs, each v * |log 0.5 - log 1|, over two pixels.
    let v = (-0.5f64).exp();
    let want = v * ((0.5 + LOG_EPS).ln() - (1.0 + LOG_EPS).ln()).abs();
    assert!((g.value(out).item().unwrap() - want).abs() < 1e-12);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let map = |rng: &mut ChaCha8Rng| uniform(rng, &MAP, -1.0, 1.0);
    let cases: Vec<(&str, Loss, Vec<Tensor<f64>>)> = vec![
        (
            "content",
            content,
            vec![map(&mut rng), map(&mut rng), map(&mut rng)],
        ),
        (
            "image_recon",
            image_recon,
            vec![map(&mut rng), map(&mut rng)],
        ),
        (
            "prior_recon",
            prior_recon,
            vec![
                uniform(&mut rng, &[4, 8], -1.0, 1.0),
                uniform(&mut rng, &[4, 8], -1.0, 1.0),
            ],
        ),
        (
            "kld",
            kld,
            vec![
                uniform(&mut rng, &[4, 8], -1.0, 1.0),
                uniform(&mut rng, &[4, 8], -1.0, 1.0),
            ],
        ),
        (
            "lsgan_d",
            lsgan_d,
            (0..4)
                .map(|_| uniform(&mut rng, &[2, 1, 4, 4], -1.0, 1.0))
                .collect(),
        ),
        (
            "lsgan_g",
            lsgan_g,
            (0..2)
                .map(|_| uniform(&mut rng, &[2, 1, 4, 4], -1.0, 1.0))
                .collect(),
        ),
        (
            "physical",
            physical,
            vec![
                uniform(&mut rng, &[2, 3, 4, 4], 0.0, 1.0),
                uniform(&mut rng, &[2, 3, 4, 4], 0.0, 1.0),
                uniform(&mut rng, &[2, 1, 4, 4], 0.0, 1.0),
            ],
        ),
        (
            "smoothness",
            smooth_wide,
            vec![
                uniform(&mut rng, &[2, 3, 4, 4], 0.1, 1.0),
                uniform(&mut rng, &[2, 3, 4, 4], 0.1, 1.0),
            ],
        ),
        (
            "smoothness_default_sigma",
            smooth_default,
            vec![
                uniform(&mut rng, &[2, 3, 4, 4], 0.1, 1.0),
                uniform(&mut rng, &[2, 3, 4, 4], 0.4, 0.5),
            ],
        ),
    ];
    for (name, f, inputs) in cases {
        let err = gradient_error(&inputs, f);
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn total_objective_weighting() {
    let w = LossWeights::default();
    assert_eq!(
        total_generator_objective(&GeneratorTerms::default(), &w).unwrap(),
        0.0
    );
    let ones = GeneratorTerms::<f64>::default().map(|_| 1.0);
    assert!((total_generator_objective(&ones, &w).unwrap() - 26.2).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = GeneratorTerms::<f64>::default().map(|_| rng.random_range(0.0..3.0));
        let w = LossWeights {
            content: rng.random_range(0.0..10.0),
            kl: rng.random_range(0.0..1.0),
            image_recon: rng.random_range(0.0..10.0),
            prior_recon: rng.random_range(0.0..1.0),
            physical: rng.random_range(0.0..5.0),
            smoothness: rng.random_range(0.0..2.0),
        };
        let want = p.adversarial
            + w.content * p.content
            + w.kl * p.kl
            + w.image_recon * p.image_recon
            + w.prior_recon * p.prior_recon
            + w.physical * p.physical
            + w.smoothness * p.smoothness;
        assert!((total_generator_objective(&p, &w).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn non_finite_term_aborts_with_its_name() {
    let parts = GeneratorTerms {
        kl: f64::INFINITY,
        ..GeneratorTerms::default()
    };
    let err = total_generator_objective(&parts, &LossWeights::default()).unwrap_err();
    assert!(
        matches!(err, Error::NonFinite(ref m) if m.contains("kl")),
        "{err}"
    );
}

fn tensor_strategy(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

fn all_losses(v: &[Tensor<f64>; 6]) -> Vec<f64> {
    let [a, b, c, z1, z2, img] = v;
    let (r, s) = (
        img.clone(),
        Tensor::from_fn(vec![a.shape()[0], 1, 4, 4], |k| {
            c.data()[(k / 16) * 48 + k % 16].abs()
        }),
    );
    vec![
        eval(&[a.clone(), b.clone(), c.clone()], content),
        eval(&[a.clone(), b.clone()], image_recon),
        eval(&[z1.clone(), z2.clone()], prior_recon),
        eval(&[z1.clone(), z2.clone()], kld),
        eval(&[a.clone(), b.clone(), c.clone(), a.clone()], lsgan_d),
        eval(&[a.clone(), c.clone()], lsgan_g),
        eval(&[img.clone(), r.clone(), s], physical),
        eval(&[r, img.clone()], smooth_wide),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_are_nonnegative_and_batch_invariant(
        a in tensor_strategy(vec![2, 3, 4, 4], -1.0, 1.0),
        b in tensor_strategy(vec![2, 3, 4, 4], -1.0, 1.0),
        c in tensor_strategy(vec![2, 3, 4, 4], -1.0, 1.0),
        z1 in tensor_strategy(vec![3, 4], -2.0, 2.0),
        z2 in tensor_strategy(vec![3, 4], -2.0, 2.0),
        img in tensor_strategy(vec![2, 3, 4, 4], 0.05, 1.0),
    ) {
        let inputs = [a, b, c, z1, z2, img];
        let base = all_losses(&inputs);
        prop_assert!(base.iter().all(|&v| v >= 0.0), "{:?}", base);
        let doubled = all_losses(&inputs.clone().map(|t| duplicate_batch(&t)));
        for (x, y) in base.iter().zip(&doubled) {
            prop_assert!((x - y).abs() < 1e-7, "{} vs {}", x, y);
        }
    }

    #[test]
    fn smoothness_ignores_global_reflectance_scale(
        r in tensor_strategy(vec![1, 3, 4, 4], 0.05, 0.5),
        img in tensor_strategy(vec![1, 3, 4, 4], 0.05, 1.0),
    ) {
        let doubled = r.map(|x| 2.0 * x);
        let a = eval(&[r, img.clone()], smooth_wide);
        let b = eval(&[doubled, img], smooth_wide);
        prop_assert!((a - b).abs() <= 1e-4 * a.max(1e-3), "{} vs {}", a, b);
    }

    #[test]
    fn kld_of_a_batch_with_itself_is_zero(z in tensor_strategy(vec![5, 6], -3.0, 3.0)) {
        prop_assert!(eval(&[z.clone(), z], kld).abs() < 1e-12);
    }
}
