#![allow(dead_code)]

use emv::nn::{LayerSpec, Mode, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na.max(nb);
    if den == 0.0 { 0.0 } else { diff / den }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub struct GradCheck {
    pub worst: f64,
    pub probes: usize,
    /// Probes straddling a ReLU/PReLU/max-pool kink, where the objective is
    /// not differentiable; detected by asymmetric one-sided slopes.
    pub kinks: usize,
}

const H: f64 = 1e-6;

/// Central difference at one coordinate, or `None` on a kink.
fn central(f0: f64, up: f64, down: f64) -> Option<f64> {
    let asym = (up - 2.0 * f0 + down).abs();
    (asym <= 1e-6 * (up - down).abs() + 1e-13).then(|| (up - down) / (2.0 * H))
}

/// Finite-difference check of parameter and input gradients for the
/// scalar objective `Σ r ⊙ logits` in train mode with a fixed dropout seed.
/// At most `per_tensor` entries of each parameter tensor (and of the input)
/// are probed.
pub fn check_network(net: &Network<f64>, batch: usize, per_tensor: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = net.input_shape();
    let x = random_tensor(&mut rng, &[batch, c, h, w]);
    let r = random_tensor(&mut rng, &[batch, net.num_classes()]);
    let dropout_seed = rng.random();
    let objective = |net: &Network<f64>, x: &Tensor<f64>| -> f64 {
        let (logits, _) = net.forward(x, Mode::Train, dropout_seed).unwrap();
        logits.values().iter().zip(r.values()).map(|(a, b)| a * b).sum()
    };
    let f0 = objective(net, &x);
    let (_, cache) = net.forward(&x, Mode::Train, dropout_seed).unwrap();
    let grads = net.backward_with_input(&cache, &r).unwrap();

    let mut out = GradCheck { worst: 0.0, probes: 0, kinks: 0 };
    let mut record = |analytic: &[f64], numeric: &[f64], kinks: usize| {
        out.worst = out.worst.max(rel_err(analytic, numeric));
        out.probes += analytic.len() + kinks;
        out.kinks += kinks;
    };
    let pick = |rng: &mut ChaCha8Rng, len: usize| -> Vec<usize> {
        if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..len)).collect()
        }
    };
    let mut probe_net = net.clone();
    for li in 0..net.params().len() {
        for pi in 0..net.params()[li].len() {
            let idx = pick(&mut rng, net.params()[li][pi].len());
            let (mut analytic, mut numeric, mut kinks) = (Vec::new(), Vec::new(), 0);
            for &k in &idx {
                let orig = probe_net.params()[li][pi].values()[k];
                probe_net.params_mut()[li][pi].values_mut()[k] = orig + H;
                let up = objective(&probe_net, &x);
                probe_net.params_mut()[li][pi].values_mut()[k] = orig - H;
                let down = objective(&probe_net, &x);
                probe_net.params_mut()[li][pi].values_mut()[k] = orig;
                match central(f0, up, down) {
                    Some(d) => {
                        numeric.push(d);
                        analytic.push(grads.layers[li][pi][k]);
                    }
                    None => kinks += 1,
                }
            }
            record(&analytic, &numeric, kinks);
        }
    }
    let dx = grads.input.as_ref().unwrap();
    let idx = pick(&mut rng, x.len());
    let (mut analytic, mut numeric, mut kinks) = (Vec::new(), Vec::new(), 0);
    let mut xp = x.clone();
    for &k in &idx {
        let orig = xp.values()[k];
        xp.values_mut()[k] = orig + H;
        let up = objective(net, &xp);
        xp.values_mut()[k] = orig - H;
        let down = objective(net, &xp);
        xp.values_mut()[k] = orig;
        match central(f0, up, down) {
            Some(d) => {
                numeric.push(d);
                analytic.push(dx[k]);
            }
            None => kinks += 1,
        }
    }
    record(&analytic, &numeric, kinks);
    out
}

/// One small network per layer kind, each closed by a linear head so the
/// output is a class vector.
pub fn layer_probes(seed: u64) -> Vec<(&'static str, Network<f64>)> {
    let head = |features: usize| LayerSpec::Linear {
        in_features: features,
        out_features: 3,
    };
    let build = |shape: [usize; 3], layers: Vec<LayerSpec>| Network::<f64>::new(shape, layers, 3, seed).unwrap();
    let conv = LayerSpec::Conv {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    vec![
        ("conv", build([2, 7, 7], vec![conv, head(3 * 4 * 4)])),
        ("maxpool", build([2, 6, 6], vec![LayerSpec::MaxPool { size: 2 }, head(2 * 3 * 3)])),
        ("relu", build([2, 4, 4], vec![LayerSpec::Relu, head(32)])),
        ("prelu", build([2, 4, 4], vec![LayerSpec::Prelu { channels: 2 }, head(32)])),
        ("dropout", build([2, 4, 4], vec![LayerSpec::Dropout { p: 0.5 }, head(32)])),
        ("linear", build([2, 3, 3], vec![head(18)])),
    ]
}

/// Multiscale random texture `f(x − dx, y − dy)`: white noise blurred at
/// σ = 0.7, 2, 4 and 8 px with amplitudes growing with scale, stretched to
/// a standard deviation of 40 grey levels.
pub fn textured_frame(w: usize, h: usize, dx: i32, dy: i32, seed: u64) -> emv::videoio::Frame {
    const PAD: usize = 40;
    const LAYERS: [(f64, f64); 4] = [(0.7, 1.0), (2.0, 2.0), (4.0, 4.0), (8.0, 8.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bw, bh) = (w + 2 * PAD, h + 2 * PAD);
    let mut acc = vec![0.0f64; bw * bh];
    for (sigma, amp) in LAYERS {
        let layer = blurred_noise(&mut rng, bw, bh, sigma);
        acc.iter_mut().zip(layer).for_each(|(a, v)| *a += amp * v);
    }
    let sd = (acc.iter().map(|v| v * v).sum::<f64>() / acc.len() as f64).sqrt();
    let luma = (0..h)
        .flat_map(|y| {
            let acc = &acc;
            (0..w).map(move |x| {
                let sx = (x as i32 + PAD as i32 - dx) as usize;
                let sy = (y as i32 + PAD as i32 - dy) as usize;
                (128.0 + 40.0 * acc[sy * bw + sx] / sd).round().clamp(0.0, 255.0) as u8
            })
        })
        .collect();
    emv::videoio::Frame::new(w, h, luma).unwrap()
}

/// Unit-RMS Gaussian-blurred uniform noise on a `bw × bh` canvas.
fn blurred_noise(rng: &mut ChaCha8Rng, bw: usize, bh: usize, sigma: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..bw * bh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let radius = (3.0 * sigma).ceil() as i32;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; bw * bh];
        for y in 0..bh {
            for x in 0..bw {
                let mut acc = 0.0;
                for (k, wk) in kernel.iter().enumerate() {
                    let o = k as i32 - radius;
                    let (sx, sy) = if horizontal { (x as i32 + o, y as i32) } else { (x as i32, y as i32 + o) };
                    if sx >= 0 && sy >= 0 && (sx as usize) < bw && (sy as usize) < bh {
                        acc += wk * src[sy as usize * bw + sx as usize];
                    }
                }
                out[y * bw + x] = acc;
            }
        }
        out
    };
    let s = blur(&blur(&noise, true), false);
    let rms = (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
    s.into_iter().map(|v| v / rms).collect()
}
