use intrinsic_core::imaging::{to_batch, Image};
use intrinsic_core::networks::checkpoint::{
    load_model, read_manifest, save_model, MANIFEST_FILE, MODEL_FORMAT_VERSION,
};
use intrinsic_core::networks::layers::adain;
use intrinsic_core::networks::{Domain, ModelBundle, NetConfig, Network, Session};
use intrinsic_core::Error;
use intrinsic_tensor::gradcheck::{directional_derivative, rel_error};
use intrinsic_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.random_range(0.0..=1.0))
}

fn default_bundle() -> ModelBundle {
    ModelBundle::new(&NetConfig::default(), 0).unwrap()
}

fn forward<F>(f: F) -> Tensor<f32>
where
    F: FnOnce(&mut Session<f32>) -> Var,
{
    let mut s = Session::inference();
    let v = f(&mut s);
    s.value(v).clone()
}

#[test]
fn default_shapes() {
    let b = default_bundle();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = random_image(&mut rng, 64, 64, 3);
    assert_eq!(
        b.content_code(Domain::Image, &img).unwrap().shape(),
        [1, 64, 16, 16]
    );
    assert_eq!(b.prior_code(Domain::Image, &img).unwrap().shape(), [1, 8]);
    let shading = random_image(&mut rng, 64, 64, 1);
    assert_eq!(
        b.content_code(Domain::Shading, &shading).unwrap().shape(),
        [1, 64, 16, 16]
    );

    let mut s = Session::<f32>::inference();
    let z = s.input(Tensor::from_fn(vec![2, 8], |k| k as f32 * 0.1));
    let (zr, zs) = b.map_priors(&mut s, z).unwrap();
    assert_eq!(s.value(zr).shape(), [2, 8]);
    assert_eq!(s.value(zs).shape(), [2, 8]);

    let c = s.input(Tensor::from_fn(vec![2, 64, 16, 16], |k| {
        ((k % 17) as f32 - 8.0) * 0.1
    }));
    for (domain, ch) in [
        (Domain::Image, 3),
        (Domain::Reflectance, 3),
        (Domain::Shading, 1),
    ] {
        let out = b.generate(&mut s, domain, c, zr).unwrap();
        let t = s.value(out);
        assert_eq!(t.shape(), [2, ch, 64, 64]);
        assert!(t.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    let x = s.input(to_batch(&[img.clone()]).unwrap());
    let maps = b.discriminate(&mut s, Domain::Reflectance, x).unwrap();
    let dims: Vec<&[usize]> = maps.iter().map(|&m| s.value(m).shape()).collect();
    assert_eq!(dims, vec![&[1, 1, 8, 8][..], &[1, 1, 4, 4], &[1, 1, 2, 2]]);
    assert!(matches!(
        b.discriminate(&mut s, Domain::Image, x),
        Err(Error::Dimension(_))
    ));

    let (r, sh) = b.decompose(&img).unwrap();
    assert_eq!((r.height(), r.width(), r.channels()), (64, 64, 3));
    assert_eq!((sh.height(), sh.width(), sh.channels()), (64, 64, 1));
    assert!(r
        .data()
        .iter()
        .chain(sh.data())
        .all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn wrong_channel_count_is_a_dimension_error() {
    let b = default_bundle();
    let gray = Image::filled(64, 64, 1, 0.5);
    let rgb = Image::filled(64, 64, 3, 0.5);
    assert!(matches!(
        b.content_code(Domain::Image, &gray),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        b.prior_code(Domain::Shading, &rgb),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(b.decompose(&gray), Err(Error::Dimension(_))));
    assert!(b.decompose(&Image::filled(30, 30, 3, 0.5)).is_err());
}

#[test]
fn forward_passes_are_deterministic() {
    let b = default_bundle();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(1), 64, 64, 3);
    assert_eq!(
        b.content_code(Domain::Image, &img).unwrap(),
        b.content_code(Domain::Image, &img).unwrap()
    );
    assert_eq!(
        b.prior_code(Domain::Reflectance, &img).unwrap(),
        b.prior_code(Domain::Reflectance, &img).unwrap()
    );
    assert_eq!(b.decompose(&img).unwrap(), b.decompose(&img).unwrap());
    let x = to_batch::<f32>(&[img]).unwrap();
    let scores = || {
        let mut s = Session::<f32>::inference();
        let v = s.input(x.clone());
        let maps = b.discriminate(&mut s, Domain::Reflectance, v).unwrap();
        maps.iter().map(|&m| s.value(m).clone()).collect::<Vec<_>>()
    };
    assert_eq!(scores(), scores());
    assert_eq!(
        ModelBundle::new(&NetConfig::default(), 0).unwrap().store(),
        b.store()
    );
}

#[test]
fn constant_image_gives_constant_interior_content() {
    let b = default_bundle();
    let img = Image::filled(128, 128, 3, 0.6);
    let code = b.content_code(Domain::Image, &img).unwrap();
    let (_, c, h, w) = code.dims4().unwrap();
    let margin = 10;
    for ch in 0..c {
        let plane = &code.data()[ch * h * w..(ch + 1) * h * w];
        let centre = plane[(h / 2) * w + w / 2];
        for y in margin..h - margin {
            for x in margin..w - margin {
                let v = plane[y * w + x];
                assert!(
                    (v - centre).abs() <= 1e-5 * centre.abs().max(1.0),
                    "channel {ch} at ({y}, {x})"
                );
            }
        }
    }
}

/// Circular shift by multiples of the prior encoder stride. Padding makes
/// the code only approximately invariant, so the drift is reported.
#[test]
fn prior_code_translation_report() {
    let b = default_bundle();
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(2), 64, 64, 3);
    let base = b.prior_code(Domain::Image, &img).unwrap();
    let scale = base.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let stride = 1 << NetConfig::default().n_down_prior;
    for k in 1..=3 {
        let shift = k * stride;
        let moved = Image::from_fn(64, 64, 3, |y, x, c| img.get(y, (x + 64 - shift) % 64, c));
        let code = b.prior_code(Domain::Image, &moved).unwrap();
        let drift = code
            .data()
            .iter()
            .zip(base.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        eprintln!("prior code drift for a {shift}px shift: {drift:.3e} (code scale {scale:.3e})");
        assert!(drift.is_finite());
    }
}

#[test]
fn different_priors_give_different_images() {
    for seed in 0..3 {
        let b = ModelBundle::new(&NetConfig::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Session::<f32>::inference();
        let c = s.input(Tensor::from_fn(vec![1, 64, 16, 16], |_| {
            rng.random_range(-1.0..1.0)
        }));
        let z1 = s.input(Tensor::from_fn(vec![1, 8], |_| rng.random_range(-1.0..1.0)));
        let z2 = s.input(Tensor::from_fn(vec![1, 8], |_| rng.random_range(-1.0..1.0)));
        for domain in [Domain::Image, Domain::Reflectance, Domain::Shading] {
            let a = b.generate(&mut s, domain, c, z1).unwrap();
            let bb = b.generate(&mut s, domain, c, z2).unwrap();
            let diff: f32 = s
                .value(a)
                .data()
                .iter()
                .zip(s.value(bb).data())
                .map(|(x, y)| (x - y).abs())
                .sum();
            assert!(diff > 0.0, "seed {seed} {domain:?}");
        }
    }
}

#[test]
fn avg_pool_matches_two_by_two_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, c, h, w) = (2, 3, 8, 6);
    let x = Tensor::<f64>::from_fn(vec![n, c, h, w], |_| rng.random_range(0.0..1.0));
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let p = g.avg_pool2(v).unwrap();
    let out = g.value(p);
    assert_eq!(out.shape(), [n, c, h / 2, w / 2]);
    let at = |b: usize, ch: usize, y: usize, xx: usize| x.data()[((b * c + ch) * h + y) * w + xx];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let want = (at(b, ch, 2 * y, 2 * xx)
                        + at(b, ch, 2 * y + 1, 2 * xx)
                        + at(b, ch, 2 * y, 2 * xx + 1)
                        + at(b, ch, 2 * y + 1, 2 * xx + 1))
                        / 4.0;
                    let got = out.data()[((b * c + ch) * (h / 2) + y) * (w / 2) + xx];
                    assert!((got - want).abs() < 1e-15);
                }
            }
        }
    }
}

fn channel_stats(t: &Tensor<f64>, b: usize, ch: usize) -> (f64, f64) {
    let (_, c, h, w) = t.dims4().unwrap();
    let plane = &t.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
    let mean = plane.iter().sum::<f64>() / plane.len() as f64;
    let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane.len() as f64;
    (mean, var.sqrt())
}

#[test]
fn adain_sets_channel_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..5));
        let (h, w) = (rng.random_range(3..9), rng.random_range(3..9));
        // Non-degenerate: every channel variance of at least 4.
        let m = loop {
            let spread = rng.random_range(4.0..8.0);
            let m = Tensor::<f64>::from_fn(vec![n, c, h, w], |_| rng.random_range(-spread..spread));
            let ok = (0..n).all(|b| (0..c).all(|ch| channel_stats(&m, b, ch).1 >= 2.0));
            if ok {
                break m;
            }
        };
        let gamma = Tensor::from_fn(vec![n, c], |_| rng.random_range(-2.0..2.0));
        let beta = Tensor::from_fn(vec![n, c], |_| rng.random_range(-2.0..2.0));
        let mut s = Session::<f64>::inference();
        let (mv, gv, bv) = (s.input(m), s.input(gamma.clone()), s.input(beta.clone()));
        let out = adain(&mut s, mv, gv, bv).unwrap();
        let out = s.value(out);
        for b in 0..n {
            for ch in 0..c {
                let (mean, std) = channel_stats(out, b, ch);
                assert!((mean - beta.data()[b * c + ch]).abs() < 1e-5, "case {case}");
                assert!(
                    (std - gamma.data()[b * c + ch].abs()).abs() < 1e-5,
                    "case {case}: {std}"
                );
            }
        }
    }

    // Unit affine standardises.
    let m = Tensor::<f64>::from_fn(vec![1, 2, 6, 6], |k| ((k * 7919) % 31) as f64 * 0.3);
    let mut s = Session::<f64>::inference();
    let mv = s.input(m.clone());
    let ones = s.input(Tensor::full(vec![1, 2], 1.0));
    let zeros = s.input(Tensor::zeros(vec![1, 2]));
    let out = adain(&mut s, mv, ones, zeros).unwrap();
    for ch in 0..2 {
        let (mean, std) = channel_stats(s.value(out), 0, ch);
        assert!(mean.abs() < 1e-5 && (std - 1.0).abs() < 1e-5);
    }
}

#[test]
fn adain_inverse_case_reproduces_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (c, h, w) = (
            rng.random_range(1..4),
            rng.random_range(2..8),
            rng.random_range(2..8),
        );
        let m = Tensor::<f64>::from_fn(vec![1, c, h, w], |_| rng.random_range(-3.0..3.0));
        // sigma includes the same epsilon the layer adds to the variance.
        let stats: Vec<(f64, f64)> = (0..c)
            .map(|ch| {
                let (mean, std) = channel_stats(&m, 0, ch);
                (mean, (std * std + 1e-5).sqrt())
            })
            .collect();
        let mut s = Session::<f64>::inference();
        let mv = s.input(m.clone());
        let gv = s.input(Tensor::from_fn(vec![1, c], |k| stats[k].1));
        let bv = s.input(Tensor::from_fn(vec![1, c], |k| stats[k].0));
        let out = adain(&mut s, mv, gv, bv).unwrap();
        for (a, b) in s.value(out).data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn mapping_jacobian_matches_finite_differences() {
    let b = ModelBundle::new(&NetConfig::default(), 6).unwrap();
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = |z: &[f64]| -> Vec<f64> {
        let mut s = Session::<f64>::inference();
        let zv = s.input(Tensor::new(vec![1, d], z.to_vec()).unwrap());
        let (zr, zs) = b.map_priors(&mut s, zv).unwrap();
        [s.value(zr).data(), s.value(zs).data()].concat()
    };
    for k in 0..2 * d {
        let mut s = Session::<f64>::inference();
        let zv = s
            .graph
            .leaf(Tensor::new(vec![1, d], z0.clone()).unwrap(), true);
        let (zr, zs) = b.map_priors(&mut s, zv).unwrap();
        let (part, idx) = if k < d { (zr, k) } else { (zs, k - d) };
        let pick = s.input(Tensor::from_fn(vec![1, d], |j| {
            if j == idx {
                1.0
            } else {
                0.0
            }
        }));
        let sel = s.graph.mul(part, pick).unwrap();
        let out = s.graph.sum(sel);
        let grads = s.graph.backward(out).unwrap();
        let analytic = grads.get(zv).unwrap().data().to_vec();
        for i in 0..d {
            let numeric = {
                let h = 1e-5;
                let mut up = z0.clone();
                up[i] += h;
                let mut down = z0.clone();
                down[i] -= h;
                (eval(&up)[k] - eval(&down)[k]) / (2.0 * h)
            };
            assert!(
                rel_error(analytic[i], numeric, 1e-8) < 1e-4,
                "J[{k}][{i}]: {} vs {numeric}",
                analytic[i]
            );
        }
    }
}

/// Checks the derivative of `<u, net(x; theta)>` along a random direction in
/// both the input and every parameter of `network`.
fn check_network_derivative(
    bundle: &ModelBundle,
    network: Network,
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&ModelBundle, &mut Session<f64>, &[Var]) -> Vec<Var>,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = bundle.store().ids_of(network).collect();
    let params: Vec<Tensor<f64>> = ids
        .iter()
        .map(|&id| bundle.store().get(id).cast())
        .collect();
    let mut point: Vec<f64> = inputs
        .iter()
        .chain(&params)
        .flat_map(|t| t.data().to_vec())
        .collect();
    let shapes: Vec<Vec<usize>> = inputs
        .iter()
        .chain(&params)
        .map(|t| t.shape().to_vec())
        .collect();
    // Move parameters off their zero-initialised biases.
    for v in point.iter_mut().skip(inputs.iter().map(|t| t.len()).sum()) {
        *v += rng.random_range(-0.05..0.05);
    }
    let direction: Vec<f64> = point.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let unflatten = |flat: &[f64]| -> Vec<Tensor<f64>> {
        let mut off = 0;
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                off += n;
                Tensor::new(s.clone(), flat[off - n..off].to_vec()).unwrap()
            })
            .collect()
    };
    let weights = std::cell::RefCell::new(None::<Vec<Tensor<f64>>>);
    let objective = |flat: &[f64], grad: bool| -> (f64, Option<Vec<f64>>) {
        let tensors = unflatten(flat);
        let mut s = Session::<f64>::inference();
        let mut leaves = Vec::new();
        for t in &tensors[..inputs.len()] {
            leaves.push(s.graph.leaf(t.clone(), grad));
        }
        for (k, &id) in ids.iter().enumerate() {
            leaves.push(s.override_param(id, tensors[inputs.len() + k].clone(), grad));
        }
        let outs = build(bundle, &mut s, &leaves[..inputs.len()]);
        let mut w = weights.borrow_mut();
        let w = w.get_or_insert_with(|| {
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ 99);
            outs.iter()
                .map(|&o| {
                    Tensor::from_fn(s.value(o).shape().to_vec(), |_| r.random_range(-1.0..1.0))
                })
                .collect()
        });
        let mut total: Option<Var> = None;
        for (&o, u) in outs.iter().zip(w.iter()) {
            let uv = s.input(u.clone());
            let p = s.graph.mul(o, uv).unwrap();
            let p = s.graph.sum(p);
            total = Some(match total {
                Some(t) => s.graph.add(t, p).unwrap(),
                None => p,
            });
        }
        let total = total.unwrap();
        let value = s.value(total).item().unwrap();
        let grads = grad.then(|| {
            let g = s.graph.backward(total).unwrap();
            leaves
                .iter()
                .zip(&tensors)
                .flat_map(|(&l, t)| g.get(l).map_or(vec![0.0; t.len()], |x| x.data().to_vec()))
                .collect()
        });
        (value, grads)
    };
    let (_, grad) = objective(&point, true);
    let analytic: f64 = grad
        .unwrap()
        .iter()
        .zip(&direction)
        .map(|(g, d)| g * d)
        .sum();
    let numeric = directional_derivative(&point, &direction, 1e-6, |x| objective(x, false).0);
    let err = rel_error(analytic, numeric, 1e-8);
    assert!(
        err < 1e-4,
        "{}: analytic {analytic} numeric {numeric} rel {err}",
        network.name()
    );
}

#[test]
fn every_network_has_correct_directional_derivatives() {
    let cfg = NetConfig::tiny();
    let bundle = ModelBundle::new(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut img =
        |c: usize| Tensor::<f64>::from_fn(vec![2, c, 16, 16], |_| rng.random_range(0.05..0.95));
    let (rgb, gray) = (img(3), img(1));
    let content = Tensor::<f64>::from_fn(vec![2, cfg.content_channels, 4, 4], |k| {
        ((k * 37 % 19) as f64 - 9.0) / 9.0
    });
    let prior = Tensor::<f64>::from_fn(vec![2, cfg.prior_dim], |k| {
        ((k * 13 % 7) as f64 - 3.0) / 3.0
    });

    for (seed, domain) in [Domain::Image, Domain::Reflectance, Domain::Shading]
        .into_iter()
        .enumerate()
    {
        let x = if domain == Domain::Shading {
            gray.clone()
        } else {
            rgb.clone()
        };
        let seed = seed as u64 * 10;
        check_network_derivative(
            &bundle,
            Network::Content(domain),
            std::slice::from_ref(&x),
            &move |b, s, v| vec![b.encode_content(s, domain, v[0]).unwrap()],
            seed + 1,
        );
        check_network_derivative(
            &bundle,
            Network::Prior(domain),
            std::slice::from_ref(&x),
            &move |b, s, v| vec![b.encode_prior(s, domain, v[0]).unwrap()],
            seed + 2,
        );
        check_network_derivative(
            &bundle,
            Network::Generator(domain),
            &[content.clone(), prior.clone()],
            &move |b, s, v| vec![b.generate(s, domain, v[0], v[1]).unwrap()],
            seed + 3,
        );
        if domain != Domain::Image {
            check_network_derivative(
                &bundle,
                Network::Discriminator(domain),
                std::slice::from_ref(&x),
                &move |b, s, v| b.discriminate(s, domain, v[0]).unwrap(),
                seed + 4,
            );
        }
    }
    check_network_derivative(
        &bundle,
        Network::Mapping,
        std::slice::from_ref(&prior),
        &|b, s, v| {
            let (zr, zs) = b.map_priors(s, v[0]).unwrap();
            vec![zr, zs]
        },
        100,
    );
}

#[test]
fn parameter_enumeration_is_stable_and_complete() {
    let b = default_bundle();
    let names: Vec<&str> = b
        .store()
        .entries()
        .iter()
        .map(|e| e.name.as_str())
        .collect();
    let unique: std::collections::HashSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    for net in Network::all() {
        assert!(b.store().ids_of(net).count() > 0, "{}", net.name());
    }
    let again = default_bundle();
    let names2: Vec<&str> = again
        .store()
        .entries()
        .iter()
        .map(|e| e.name.as_str())
        .collect();
    assert_eq!(names, names2);
}

#[test]
fn serialisation_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let b = ModelBundle::new(&NetConfig::default(), 9).unwrap();
    save_model(&b, dir.path()).unwrap();
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.format_version, MODEL_FORMAT_VERSION);
    assert_eq!(manifest.tensors.len(), b.store().len());
    let loaded = load_model(dir.path()).unwrap();
    assert_eq!(loaded.store(), b.store());
    assert_eq!(loaded.config(), b.config());

    let img = random_image(&mut ChaCha8Rng::seed_from_u64(9), 64, 64, 3);
    assert_eq!(loaded.decompose(&img).unwrap(), b.decompose(&img).unwrap());
    let x = to_batch::<f32>(&[img]).unwrap();
    let scores = |m: &ModelBundle| {
        forward(|s| {
            let v = s.input(x.clone());
            m.discriminate(s, Domain::Reflectance, v).unwrap()[1]
        })
    };
    assert_eq!(scores(&loaded), scores(&b));
}

#[test]
fn unknown_model_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_model(
        &ModelBundle::new(&NetConfig::tiny(), 0).unwrap(),
        dir.path(),
    )
    .unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["format_version"] = serde_json::json!(MODEL_FORMAT_VERSION + 1);
    std::fs::write(&path, json.to_string()).unwrap();
    assert!(matches!(load_model(dir.path()), Err(Error::Checkpoint(_))));
}
