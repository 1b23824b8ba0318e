//! Loss harness and scalar-loop reimplementations shared by several test
//! targets.
#![allow(dead_code)]

use intrinsic_core::losses::{
    content_consistency_loss, image_recon_loss, kld_loss, lsgan_d_loss, lsgan_g_loss,
    physical_loss, prior_recon_loss, reflectance_smoothness_loss, SmoothnessSigma,
};
use intrinsic_core::Result;
use intrinsic_tensor::gradcheck::{central_gradient, max_rel_error};
use intrinsic_tensor::{Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Loss = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

pub fn eval(inputs: &[Tensor<f64>], f: Loss) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    g.value(out).item().unwrap()
}

/// Largest relative error between backprop and central differences over
/// every element of every input.
pub fn gradient_error(inputs: &[Tensor<f64>], f: Loss) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map_or(vec![0.0; input.len()], |t| t.data().to_vec());
        let numeric = central_gradient(input.data(), 1e-5, |x| {
            let mut probe = inputs.to_vec();
            probe[k] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
            eval(&probe, f)
        });
        worst = worst.max(max_rel_error(&analytic, &numeric, 1e-6));
    }
    worst
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

pub const MAP: [usize; 4] = [2, 2, 4, 4];

pub fn content(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    content_consistency_loss(g, v[0], v[1], v[2])
}
pub fn image_recon(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    image_recon_loss(g, v[0], v[1])
}
pub fn prior_recon(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    prior_recon_loss(g, v[0], v[1])
}
pub fn kld(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    kld_loss(g, v[0], v[1])
}
pub fn lsgan_d(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    lsgan_d_loss(g, &v[..2], &v[2..])
}
pub fn lsgan_g(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    lsgan_g_loss(g, v)
}
pub fn physical(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    physical_loss(g, v[0], v[1], v[2])
}
pub fn smooth_default(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    reflectance_smoothness_loss(g, v[0], v[1], &SmoothnessSigma::default())
}
pub const WIDE: SmoothnessSigma = SmoothnessSigma([0.5, 0.5, 0.3, 0.2, 0.2]);
pub fn smooth_wide(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
    reflectance_smoothness_loss(g, v[0], v[1], &WIDE)
}

pub fn loop_mean_abs(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

pub fn kld_oracle(p: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let moments = |t: &Tensor<f64>| {
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::new();
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| t.data()[i * d + j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            out.push((mean, var.max(1e-6)));
        }
        out
    };
    let (mp, mr) = (moments(p), moments(r));
    let mut total = 0.0;
    for ((m1, v1), (m2, v2)) in mp.iter().zip(&mr) {
        total += 0.5 * ((m1 - m2).powi(2) / v2 + v1 / v2 - 1.0 - (v1 / v2).ln());
    }
    total / mp.len() as f64
}

pub fn lsgan_oracle(real: &[Tensor<f64>], fake: &[Tensor<f64>]) -> (f64, f64) {
    let half_mse = |t: &Tensor<f64>, target: f64| {
        let mut s = 0.0;
        for &x in t.data() {
            s += (x - target) * (x - target);
        }
        0.5 * s / t.len() as f64
    };
    let k = fake.len() as f64;
    let d = real
        .iter()
        .zip(fake)
        .map(|(r, f)| half_mse(r, 1.0) + half_mse(f, 0.0))
        .sum::<f64>()
        / k;
    let g = fake.iter().map(|f| half_mse(f, 1.0)).sum::<f64>() / k;
    (d, g)
}

pub fn physical_oracle(i: &Tensor<f64>, r: &Tensor<f64>, s: &Tensor<f64>) -> f64 {
    let (n, c, h, w) = i.dims4().unwrap();
    let mut total = 0.0;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let k = ((b * c + ch) * h + y) * w + x;
                    let sv = s.data()[(b * h + y) * w + x];
                    total += (i.data()[k] - r.data()[k] * sv).abs();
                }
            }
        }
    }
    total / i.len() as f64
}

/// Sums over every pixel and each of its eight neighbours (ordered pairs).
pub fn smoothness_oracle(r: &Tensor<f64>, img: &Tensor<f64>, sigma: &[f64; 5]) -> f64 {
    let (n, _, h, w) = img.dims4().unwrap();
    let at = |t: &Tensor<f64>, b: usize, c: usize, y: usize, x: usize| {
        t.data()[((b * 3 + c) * h + y) * w + x]
    };
    let feature = |b: usize, y: usize, x: usize| {
        let (red, green, blue) = (
            at(img, b, 0, y, x),
            at(img, b, 1, y, x),
            at(img, b, 2, y, x),
        );
        let sum = red + green + blue;
        [
            x as f64 / (w.max(2) - 1) as f64,
            y as f64 / (h.max(2) - 1) as f64,
            sum / 3.0,
            red / (sum + 1e-6),
            green / (sum + 1e-6),
        ]
    };
    let mut total = 0.0;
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let fi = feature(b, y, x);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if (dy, dx) == (0, 0)
                            || yy < 0
                            || xx < 0
                            || yy >= h as isize
                            || xx >= w as isize
                        {
                            continue;
                        }
                        let (yy, xx) = (yy as usize, xx as usize);
                        let fj = feature(b, yy, xx);
                        let mut q = 0.0;
                        for k in 0..5 {
                            q += (fi[k] - fj[k]).powi(2) / (sigma[k] * sigma[k]);
                        }
                        let v = (-0.5 * q).exp();
                        let mut d = 0.0;
                        for c in 0..3 {
                            d += ((at(r, b, c, y, x) + 1e-6).ln()
                                - (at(r, b, c, yy, xx) + 1e-6).ln())
                            .abs();
                        }
                        total += v * d / 3.0;
                    }
                }
            }
        }
    }
    total / (n * h * w) as f64
}

pub fn physical_image(r: &Tensor<f64>, s: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, w) = r.dims4().unwrap();
    Tensor::from_fn(vec![n, c, h, w], |k| {
        let b = k / (c * h * w);
        let p = k % (h * w);
        r.data()[k] * s.data()[b * h * w + p]
    })
}

use intrinsic_core::imaging::Image;

fn values(im: &Image) -> Vec<f64> {
    im.data().iter().map(|&v| v as f64).collect()
}

/// Brute-force minimum of `mean((a p - g)^2)` over `a` in `[0, 10]`, step `1e-4`.
pub fn si_mse_scan(pred: &Image, gt: &Image) -> f64 {
    let (p, g) = (values(pred), values(gt));
    let mut best = f64::INFINITY;
    for k in 0..=100_000 {
        let a = k as f64 * 1e-4;
        let mut s = 0.0;
        for i in 0..p.len() {
            s += (a * p[i] - g[i]) * (a * p[i] - g[i]);
        }
        best = best.min(s / p.len() as f64);
    }
    best
}

/// Window loop: per-window best scale, summed error over summed `gt^2`.
pub fn lmse_loop(pred: &Image, gt: &Image, window: usize, stride: usize) -> f64 {
    let (h, w, c) = (gt.height(), gt.width(), gt.channels());
    let mut num = 0.0;
    let mut den = 0.0;
    let mut y0 = 0;
    while y0 + window <= h {
        let mut x0 = 0;
        while x0 + window <= w {
            let mut pp = 0.0;
            let mut pg = 0.0;
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    for ch in 0..c {
                        let (p, g) = (pred.get(y, x, ch) as f64, gt.get(y, x, ch) as f64);
                        pp += p * p;
                        pg += p * g;
                    }
                }
            }
            let a = if pp > 0.0 { pg / pp } else { 0.0 };
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    for ch in 0..c {
                        let (p, g) = (pred.get(y, x, ch) as f64, gt.get(y, x, ch) as f64);
                        num += (a * p - g) * (a * p - g);
                        den += g * g;
                    }
                }
            }
            x0 += stride;
        }
        y0 += stride;
    }
    num / den
}

/// `(1 - SSIM) / 2` with SSIM from the textbook formula on every 8x8 window.
pub fn dssim_loop(pred: &Image, gt: &Image) -> f64 {
    let (h, w, c) = (gt.height(), gt.width(), gt.channels());
    let k = 8.min(h).min(w);
    let n = (k * k) as f64;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut ssim_sum = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        let mut count = 0.0;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let mut win_p = Vec::new();
                let mut win_g = Vec::new();
                for y in y0..y0 + k {
                    for x in x0..x0 + k {
                        win_p.push(pred.get(y, x, ch) as f64);
                        win_g.push(gt.get(y, x, ch) as f64);
                    }
                }
                let mp = win_p.iter().sum::<f64>() / n;
                let mg = win_g.iter().sum::<f64>() / n;
                let vp = win_p.iter().map(|v| (v - mp).powi(2)).sum::<f64>() / n;
                let vg = win_g.iter().map(|v| (v - mg).powi(2)).sum::<f64>() / n;
                let cov = win_p
                    .iter()
                    .zip(&win_g)
                    .map(|(p, g)| (p - mp) * (g - mg))
                    .sum::<f64>()
                    / n;
                acc += (2.0 * mp * mg + c1) * (2.0 * cov + c2)
                    / ((mp * mp + mg * mg + c1) * (vp + vg + c2));
                count += 1.0;
            }
        }
        ssim_sum += acc / count;
    }
    (1.0 - ssim_sum / c as f64) / 2.0
}
