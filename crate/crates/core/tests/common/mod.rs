#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splinenet::layers::{Activation, DenseLayer, Layer, PowerMlpLayer};
use splinenet::{KnotGrid, Network, NetworkKind, Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strictly increasing knots with gaps in `[1e-3, 1]` and a random start.
pub fn random_grid(rng: &mut impl Rng, k: usize, g: usize) -> KnotGrid {
    let n = g + 2 * k + 1;
    let mut t = rng.random_range(-3.0..1.0);
    let knots = (0..n)
        .map(|_| {
            let v = t;
            t += rng.random_range(1e-3..1.0);
            v
        })
        .collect();
    KnotGrid::new(k, g, knots).unwrap()
}

/// `J_0(x) = (1/π) ∫_0^π cos(x sin θ) dθ` with the trapezoid rule, which
/// converges geometrically for this periodic integrand.
pub fn j0_trapezoid(x: f64, n: usize) -> f64 {
    let h = std::f64::consts::PI / n as f64;
    let mut s = 0.5 * (1.0 + 1.0);
    for i in 1..n {
        s += (x * (i as f64 * h).sin()).cos();
    }
    s * h / std::f64::consts::PI
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Small random network of each kind, with every parameter block populated.
pub fn random_net(kind: NetworkKind, seed: u64) -> Network {
    let mut r = rng(seed);
    let depth = r.random_range(1..=3);
    let mut dims = vec![r.random_range(1..=3)];
    for _ in 0..depth {
        dims.push(r.random_range(1..=3));
    }
    match kind {
        NetworkKind::Kan => {
            let k = r.random_range(2..=3);
            let g = r.random_range(2..=5);
            let mut net = Network::kan(&dims, k, g, seed).unwrap();
            for p in net.params_mut() {
                for v in p.data_mut() {
                    *v += r.random_range(-0.3..0.3);
                }
            }
            net
        }
        NetworkKind::PowerMlp => {
            let k = r.random_range(2..=3);
            let last = dims.len() - 2;
            let layers = dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let (n, m) = (w[0], w[1]);
                    let omega = random_tensor(&mut r, m, n, 1.0);
                    let gamma = random_tensor(&mut r, 1, m, 0.5);
                    if i == last {
                        Layer::PowerMlp(PowerMlpLayer::affine(omega, gamma, k).unwrap())
                    } else {
                        let alpha = r.random_bool(0.8).then(|| random_tensor(&mut r, m, n, 1.0));
                        Layer::PowerMlp(PowerMlpLayer::hidden(k, omega, gamma, alpha).unwrap())
                    }
                })
                .collect();
            Network::from_layers(NetworkKind::PowerMlp, k, dims[0], layers, "random", seed).unwrap()
        }
        NetworkKind::Mlp => {
            let last = dims.len() - 2;
            let layers = dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    Layer::Dense(DenseLayer {
                        weight: random_tensor(&mut r, w[1], w[0], 1.0),
                        bias: random_tensor(&mut r, 1, w[1], 0.5),
                        activation: if i == last { Activation::Identity } else { Activation::Relu },
                    })
                })
                .collect();
            Network::from_layers(NetworkKind::Mlp, 1, dims[0], layers, "random", seed).unwrap()
        }
    }
}

fn loss(net: &Network, x: &Tensor, y: &Tensor) -> f64 {
    let pred = net.forward(x).unwrap();
    pred.data().iter().zip(y.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt()
}

/// Largest relative error between taped gradients and central differences
/// of `||net(x) − y||₂` over every parameter (and the inputs). The relative
/// error uses a floor of 1e-3 on the magnitude.
pub fn gradcheck(net: &Network, x: &Tensor, y: &Tensor, h: f64) -> f64 {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let yi = tape.leaf(y.clone());
    let (out, ids) = net.forward_taped(&mut tape, xi).unwrap();
    let l = tape.rmse_loss(out, yi).unwrap();
    let grads = tape.backward(l).unwrap();
    // rmse = ||·||₂ / sqrt(n); compare against the unscaled norm
    let scale = (y.len() as f64).sqrt();

    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
    let mut worst = 0.0f64;
    let n_params = net.params().len();
    for pi in 0..n_params {
        let g = grads.get_or_zeros(ids[pi], tape.value(ids[pi]).shape());
        for e in 0..g.len() {
            let mut plus = net.clone();
            plus.params_mut()[pi].data_mut()[e] += h;
            let mut minus = net.clone();
            minus.params_mut()[pi].data_mut()[e] -= h;
            let fd = (loss(&plus, x, y) - loss(&minus, x, y)) / (2.0 * h);
            worst = worst.max(rel(g.data()[e] * scale, fd));
        }
    }
    let gx = grads.get_or_zeros(xi, x.shape());
    for e in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[e] += h;
        let mut xm = x.clone();
        xm.data_mut()[e] -= h;
        let fd = (loss(net, &xp, y) - loss(net, &xm, y)) / (2.0 * h);
        worst = worst.max(rel(gx.data()[e] * scale, fd));
    }
    worst
}

/// Random inputs in `[-1.5, 1.5]` and targets for `net`.
pub fn batch_for(net: &Network, seed: u64) -> (Tensor, Tensor) {
    let mut r = rng(seed ^ 0x9e37);
    let n = 4;
    (random_tensor(&mut r, n, net.input_dim, 1.5), random_tensor(&mut r, n, net.output_dim(), 1.0))
}
