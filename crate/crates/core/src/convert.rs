//! Exact conversions between KAN and PowerMLP networks, and a sampling
//! verifier for functional equivalence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{silu, Tensor};
use crate::layers::{KanLayer, Layer, LayerError, Network, NetworkKind, PowerMlpLayer};
use crate::spline::{affine_spline, reluk_spline, spline_power_weights, KnotGrid, SplineError};

/// Minimiser of `x / (1 + e^{-x})`.
pub const SILU_ARGMIN: f64 = -1.278_464_542_761_074;
/// `b(SILU_ARGMIN)`; at the minimiser `b(x) = x + 1`.
pub const SILU_MIN: f64 = SILU_ARGMIN + 1.0;

/// Widening applied to interval bounds before laying out a `(k,2)`-grid.
pub const BOUND_MARGIN: f64 = 1.1;

/// Constant in the emitted-parameter check `count ≤ C·k·p`.
pub const PARAM_BOUND_CONSTANT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvertError {
    #[error("expected a {expected} network, got {got}")]
    WrongKind { expected: NetworkKind, got: NetworkKind },
    #[error("layer {layer}: emitted width {width} exceeds the cap {cap}")]
    WidthCap { layer: usize, width: usize, cap: usize },
    #[error("layer {layer}: repeated knots at position {position}")]
    RepeatedKnots { layer: usize, position: usize },
    #[error(
        "layer {layer}: nonzero basis weights u on an inner KAN layer; b applied to a mixed \
         hidden signal has no exact PowerMLP form"
    )]
    InnerBasisNotRepresentable { layer: usize },
    #[error("layer {layer}: interval bound is not finite")]
    Unbounded { layer: usize },
    #[error("domain has {got} dimensions, network expects {expected}")]
    DomainDim { expected: usize, got: usize },
    #[error("ReLU-k order must be at least 1 for the spline construction")]
    ZeroOrder,
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("dimension {dim}: need finite lower < upper, got [{lo}, {hi}]")]
    Interval { dim: usize, lo: f64, hi: f64 },
    #[error("domain needs at least one dimension")]
    Empty,
}

/// Axis-aligned box `∏ [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DomainError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(DomainError::Empty);
        }
        for (dim, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(DomainError::Interval { dim, lo, hi });
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-e, e]^dim`.
    pub fn symmetric(dim: usize, e: f64) -> Result<Self, DomainError> {
        Self::new(vec![-e; dim], vec![e; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Largest `|coordinate|` in the box.
    pub fn radius(&self) -> f64 {
        self.lower.iter().chain(&self.upper).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvertOptions {
    /// Upper limit on any emitted hidden width.
    pub max_width: usize,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self { max_width: 65_536 }
    }
}

/// KAN → PowerMLP, exact on all of ℝⁿ.
///
/// Each KAN layer `n → m` becomes one hidden layer holding the units
/// `σ_k(x_p − t_i)` for every input and every knot, plus `m` basis units
/// `Σ_p u_{q,p} b(x_p)` when `u ≠ 0`. The mixing matrix `β` that forms the
/// KAN outputs from those units is folded into the next layer's `ω`, and a
/// closing affine layer applies the last `β`. Depth grows by one.
///
/// The basis term can only be carried on the first layer: later layers see
/// the hidden units, not the KAN activations, and `b(βh)` is not a linear
/// image of `b(h)`. Inner layers with nonzero `u` are rejected.
pub fn kan_to_powermlp(net: &Network, opts: ConvertOptions) -> Result<Network, ConvertError> {
    if net.kind != NetworkKind::Kan {
        return Err(ConvertError::WrongKind { expected: NetworkKind::Kan, got: net.kind });
    }
    net.validate()?;
    let k = net.k;
    let mut out_layers = Vec::with_capacity(net.depth() + 1);
    // β of the previous KAN layer: KAN activations = β · (hidden units).
    let mut beta: Option<Tensor> = None;

    for (li, layer) in net.layers.iter().enumerate() {
        let Layer::Kan(kl) = layer else { unreachable!("validated kind") };
        let knots = kl.grid.knots();
        if let Some(position) = knots.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ConvertError::RepeatedKnots { layer: li, position: position + 1 });
        }
        let (n, m) = (kl.n_in(), kl.n_out());
        let kk = knots.len();
        let has_basis = kl.u.data().iter().any(|&v| v != 0.0);
        if has_basis && li > 0 {
            return Err(ConvertError::InnerBasisNotRepresentable { layer: li });
        }
        let extra = if has_basis { m } else { 0 };
        let width = n * kk + extra;
        if width > opts.max_width {
            return Err(ConvertError::WidthCap { layer: li, width, cap: opts.max_width });
        }
        let prev_width = beta.as_ref().map_or(n, Tensor::cols);

        let mut omega = Tensor::zeros(width, prev_width);
        let mut gamma = Tensor::zeros(1, width);
        let mut alpha = Tensor::zeros(width, prev_width);
        for p in 0..n {
            for (i, &t) in knots.iter().enumerate() {
                let unit = p * kk + i;
                match &beta {
                    None => omega.set(unit, p, 1.0),
                    Some(b) => {
                        for c in 0..prev_width {
                            omega.set(unit, c, b.get(p, c));
                        }
                    }
                }
                gamma.set(0, unit, -t);
            }
        }
        for q in 0..extra {
            let unit = n * kk + q;
            // σ_k(−1) = 0 for every k, including the step σ_0.
            gamma.set(0, unit, -1.0);
            for p in 0..n {
                alpha.set(unit, p, kl.u.get(q, p));
            }
        }
        out_layers.push(Layer::PowerMlp(PowerMlpLayer { k, omega, gamma, alpha: Some(alpha), is_final: false }));

        let mut next_beta = Tensor::zeros(m, width);
        for q in 0..m {
            for p in 0..n {
                let v = kl.v.get(q, p);
                if v == 0.0 {
                    continue;
                }
                let w = spline_power_weights(&kl.grid, kl.coeffs.row(q * n + p));
                for (i, wi) in w.into_iter().enumerate() {
                    next_beta.set(q, p * kk + i, v * wi);
                }
            }
            if has_basis {
                next_beta.set(q, n * kk + q, 1.0);
            }
        }
        beta = Some(next_beta);
    }

    let beta = beta.expect("network has at least one layer");
    let out_dim = beta.rows();
    out_layers.push(Layer::PowerMlp(PowerMlpLayer { k, omega: beta, gamma: Tensor::zeros(1, out_dim), alpha: None, is_final: true }));
    Ok(Network::from_layers(NetworkKind::PowerMlp, k, net.input_dim, out_layers, format!("{}->powermlp", net.name), net.seed)?)
}

/// Interval `[lo, hi]` per coordinate.
type Bounds = Vec<(f64, f64)>;

fn silu_range(lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (silu(lo), silu(hi));
    let min = if lo <= SILU_ARGMIN && SILU_ARGMIN <= hi { SILU_MIN } else { a.min(b) };
    (min, a.max(b))
}

fn affine_bounds(omega: &Tensor, gamma: &Tensor, input: &Bounds) -> Bounds {
    (0..omega.rows())
        .map(|q| {
            input.iter().enumerate().fold((gamma.get(0, q), gamma.get(0, q)), |(lo, hi), (p, &(a, b))| {
                let w = omega.get(q, p);
                (lo + (w * a).min(w * b), hi + (w * a).max(w * b))
            })
        })
        .collect()
}

fn grid_radius(bounds: &[(f64, f64)], layer: usize) -> Result<f64, ConvertError> {
    let r = bounds.iter().fold(0.0f64, |m, &(a, b)| m.max(a.abs()).max(b.abs()));
    let e = (BOUND_MARGIN * r).max(1.0);
    if e.is_finite() {
        Ok(e)
    } else {
        Err(ConvertError::Unbounded { layer })
    }
}

/// Fill edge `(q, p)` of `layer` with the spline `w x + g` (or leave it
/// empty when both vanish).
fn set_affine_edge(layer: &mut KanLayer, q: usize, p: usize, w: f64, g: f64) -> Result<(), ConvertError> {
    if w == 0.0 && g == 0.0 {
        return Ok(());
    }
    let s = affine_spline(w, g, &layer.grid)?;
    layer.set_spline_coeffs(q, p, s.coeffs());
    layer.v.set(q, p, 1.0);
    Ok(())
}

/// Result of [`powermlp_to_kan`], with the grid radii chosen per KAN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KanConversion {
    pub network: Network,
    pub grid_radii: Vec<f64>,
}

impl KanConversion {
    /// Nonzero parameters of the emitted KAN.
    pub fn emitted_params(&self) -> usize {
        self.network.nonzero_param_count()
    }
}

/// PowerMLP → KAN, exact on `domain`.
///
/// A hidden layer `n → m` becomes two KAN layers. The first (`n → m+n`)
/// computes `ωx + γ` with affine splines and passes each `x_p` through; the
/// second (`m+n → m`) applies `σ_k` as a spline on the diagonal and adds
/// `α b(x)` through the basis weights of the pass-through edges. The final
/// affine layer becomes one KAN layer of affine splines. Grids are symmetric
/// `(k,2)`-grids sized by interval arithmetic with a 10% margin.
pub fn powermlp_to_kan(net: &Network, domain: &BoxDomain) -> Result<KanConversion, ConvertError> {
    if net.kind != NetworkKind::PowerMlp {
        return Err(ConvertError::WrongKind { expected: NetworkKind::PowerMlp, got: net.kind });
    }
    net.validate()?;
    if domain.dim() != net.input_dim {
        return Err(ConvertError::DomainDim { expected: net.input_dim, got: domain.dim() });
    }
    let k = net.k;
    if k == 0 {
        return Err(ConvertError::ZeroOrder);
    }
    let order = k as usize;
    let mut bounds: Bounds = domain.lower().iter().copied().zip(domain.upper().iter().copied()).collect();
    let mut layers = Vec::new();
    let mut radii = Vec::new();

    for (li, layer) in net.layers.iter().enumerate() {
        let Layer::PowerMlp(pl) = layer else { unreachable!("validated kind") };
        let (n, m) = (pl.n_in(), pl.n_out());
        let e1 = grid_radius(&bounds, li)?;
        let grid1 = KnotGrid::symmetric_pair(order, e1)?;
        let pre = affine_bounds(&pl.omega, &pl.gamma, &bounds);

        if pl.is_final {
            let mut kl = KanLayer::zeros(n, m, grid1);
            for q in 0..m {
                for p in 0..n {
                    set_affine_edge(&mut kl, q, p, pl.omega.get(q, p), pl.gamma.get(0, q) / n as f64)?;
                }
            }
            layers.push(Layer::Kan(kl));
            radii.push(e1);
            bounds = pre;
            continue;
        }

        let passthrough = pl.alpha.is_some();
        let mid = if passthrough { m + n } else { m };
        let mut a = KanLayer::zeros(n, mid, grid1);
        for q in 0..m {
            for p in 0..n {
                set_affine_edge(&mut a, q, p, pl.omega.get(q, p), pl.gamma.get(0, q) / n as f64)?;
            }
        }
        if passthrough {
            for p in 0..n {
                set_affine_edge(&mut a, m + p, p, 1.0, 0.0)?;
            }
        }

        let e2 = grid_radius(&pre, li)?;
        let grid2 = KnotGrid::symmetric_pair(order, e2)?;
        let relu = reluk_spline(&grid2)?;
        let mut b = KanLayer::zeros(mid, m, grid2);
        for r in 0..m {
            b.set_spline_coeffs(r, r, relu.coeffs());
            b.v.set(r, r, 1.0);
        }
        if let Some(alpha) = &pl.alpha {
            for r in 0..m {
                for p in 0..n {
                    b.u.set(r, m + p, alpha.get(r, p));
                }
            }
        }

        let relu_k = |x: f64| crate::spline::eval_relu_pow(k, x);
        let next: Bounds = (0..m)
            .map(|r| {
                let (plo, phi) = pre[r];
                let (mut lo, mut hi) = (relu_k(plo), relu_k(phi));
                if let Some(alpha) = &pl.alpha {
                    for (p, &(xlo, xhi)) in bounds.iter().enumerate() {
                        let (slo, shi) = silu_range(xlo, xhi);
                        let w = alpha.get(r, p);
                        lo += (w * slo).min(w * shi);
                        hi += (w * slo).max(w * shi);
                    }
                }
                (lo, hi)
            })
            .collect();
        if next.iter().any(|&(a, b)| !(a.is_finite() && b.is_finite())) {
            return Err(ConvertError::Unbounded { layer: li });
        }
        layers.push(Layer::Kan(a));
        layers.push(Layer::Kan(b));
        radii.extend([e1, e2]);
        bounds = next;
    }

    let network = Network::from_layers(NetworkKind::Kan, k, net.input_dim, layers, format!("{}->kan", net.name), net.seed)?;
    Ok(KanConversion { network, grid_radii: radii })
}

/// Outcome of [`verify_equivalence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub samples: usize,
    pub max_abs_deviation: f64,
    pub argmax: Vec<f64>,
    /// Largest `|output|` of either network over the samples.
    pub max_abs_output: f64,
    pub tolerance: f64,
    pub pass: bool,
}

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `count` Halton points in `domain`, preceded by its corners (capped at 1024
/// corners for high dimensions).
pub fn sample_points(domain: &BoxDomain, count: usize) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let mut pts = Vec::with_capacity(count);
    let corners = if d < 10 { 1usize << d } else { 1024 };
    for c in 0..corners.min(count) {
        pts.push((0..d).map(|i| if (c >> i) & 1 == 1 { domain.upper[i] } else { domain.lower[i] }).collect());
    }
    let mut i = 1u64;
    while pts.len() < count {
        pts.push(
            (0..d)
                .map(|j| {
                    let base = PRIMES.get(j).copied().unwrap_or(2 + 2 * j as u32 + 1) as u64;
                    domain.lower[j] + (domain.upper[j] - domain.lower[j]) * radical_inverse(i, base)
                })
                .collect(),
        );
        i += 1;
    }
    pts
}

const CHUNK: usize = 512;

/// `max |a(x) − b(x)|` over low-discrepancy samples of `domain`.
/// Non-finite outputs count as infinite deviation.
pub fn verify_equivalence(a: &Network, b: &Network, domain: &BoxDomain, samples: usize, tol: f64) -> Result<EquivalenceReport, LayerError> {
    if a.input_dim != b.input_dim || a.input_dim != domain.dim() {
        return Err(LayerError::InputDim { expected: a.input_dim, got: if a.input_dim != b.input_dim { b.input_dim } else { domain.dim() } });
    }
    let pts = sample_points(domain, samples.max(1));
    let d = domain.dim();
    let chunks: Vec<(f64, usize, f64)> = pts
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| -> Result<(f64, usize, f64), LayerError> {
            let x = Tensor::new(chunk.len(), d, chunk.concat())?;
            let (ya, yb) = (a.forward(&x)?, b.forward(&x)?);
            if ya.shape() != yb.shape() {
                return Err(LayerError::InputDim { expected: ya.cols(), got: yb.cols() });
            }
            let cols = ya.cols();
            let mut best = (0.0f64, ci * CHUNK, 0.0f64);
            for r in 0..chunk.len() {
                for c in 0..cols {
                    let (va, vb) = (ya.get(r, c), yb.get(r, c));
                    let dev = if va.is_finite() && vb.is_finite() { (va - vb).abs() } else { f64::INFINITY };
                    if dev > best.0 {
                        best.0 = dev;
                        best.1 = ci * CHUNK + r;
                    }
                    let mag = va.abs().max(vb.abs());
                    if mag.is_finite() {
                        best.2 = best.2.max(mag);
                    }
                }
            }
            Ok(best)
        })
        .collect::<Result<_, _>>()?;
    let (dev, idx, mag) = chunks.into_iter().fold((0.0f64, 0usize, 0.0f64), |acc, c| {
        let pick = if c.0 > acc.0 { (c.0, c.1) } else { (acc.0, acc.1) };
        (pick.0, pick.1, acc.2.max(c.2))
    });
    Ok(EquivalenceReport { samples: pts.len(), max_abs_deviation: dev, argmax: pts[idx].clone(), max_abs_output: mag, tolerance: tol, pass: dev <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_minimum_constants() {
        assert!((silu(SILU_ARGMIN) - SILU_MIN).abs() < 1e-15);
        let h = 1e-5;
        assert!(silu(SILU_ARGMIN - h) > SILU_MIN && silu(SILU_ARGMIN + h) > SILU_MIN);
        assert_eq!(silu_range(-3.0, 3.0).0, SILU_MIN);
        assert_eq!(silu_range(0.0, 1.0), (0.0, silu(1.0)));
    }

    #[test]
    fn halton_points_fill_the_box() {
        let dom = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let pts = sample_points(&dom, 100);
        assert_eq!(pts.len(), 100);
        assert_eq!(pts[0], vec![-1.0, 0.0]);
        assert_eq!(pts[3], vec![1.0, 2.0]);
        assert!(pts.iter().all(|p| (-1.0..=1.0).contains(&p[0]) && (0.0..=2.0).contains(&p[1])));
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn domain_validation() {
        assert!(BoxDomain::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoxDomain::new(vec![], vec![]).is_err());
        assert!(BoxDomain::symmetric(2, f64::INFINITY).is_err());
        assert_eq!(BoxDomain::symmetric(3, 2.0).unwrap().radius(), 2.0);
    }

    #[test]
    fn depth_one_kan_converts_exactly() {
        let kan = Network::kan(&[2, 3], 3, 4, 5).unwrap();
        let pm = kan_to_powermlp(&kan, ConvertOptions::default()).unwrap();
        assert_eq!(pm.depth(), 2);
        let rep = verify_equivalence(&kan, &pm, &BoxDomain::symmetric(2, 3.0).unwrap(), 2000, 1e-9).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn inner_basis_is_rejected() {
        let kan = Network::kan(&[2, 2, 1], 3, 3, 1).unwrap();
        assert_eq!(kan_to_powermlp(&kan, ConvertOptions::default()), Err(ConvertError::InnerBasisNotRepresentable { layer: 1 }));
    }

    #[test]
    fn width_cap_enforced() {
        let kan = Network::kan(&[2, 1], 3, 3, 1).unwrap();
        let err = kan_to_powermlp(&kan, ConvertOptions { max_width: 10 }).unwrap_err();
        assert!(matches!(err, ConvertError::WidthCap { layer: 0, .. }));
    }

    #[test]
    fn planted_offset_detected() {
        let a = Network::powermlp(&[2, 3, 1], 3, 2).unwrap();
        let mut b = a.clone();
        if let Some(Layer::PowerMlp(l)) = b.layers.last_mut() {
            l.gamma.data_mut()[0] += 1e-3;
        }
        let dom = BoxDomain::symmetric(2, 1.0).unwrap();
        let same = verify_equivalence(&a, &a, &dom, 500, 0.0).unwrap();
        assert_eq!(same.max_abs_deviation, 0.0);
        assert!(same.pass);
        let rep = verify_equivalence(&a, &b, &dom, 500, 1e-4).unwrap();
        assert!((rep.max_abs_deviation - 1e-3).abs() < 1e-12);
        assert!(!rep.pass);
    }

    #[test]
    fn powermlp_to_kan_small() {
        let mut net = Network::powermlp(&[2, 3, 1], 3, 8).unwrap();
        if let Layer::PowerMlp(l) = &mut net.layers[0] {
            l.alpha = Some(Tensor::new(3, 2, vec![0.5, -0.2, 0.1, 0.3, -0.7, 0.4]).unwrap());
            l.gamma = Tensor::new(1, 3, vec![0.1, -0.2, 0.3]).unwrap();
        }
        let dom = BoxDomain::symmetric(2, 1.0).unwrap();
        let conv = powermlp_to_kan(&net, &dom).unwrap();
        assert_eq!(conv.network.depth(), 3);
        assert!(conv.network.width() <= 2 * net.width());
        let rep = verify_equivalence(&net, &conv.network, &dom, 4000, 1e-9).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn wrong_kind_rejected() {
        let mlp = Network::mlp(&[2, 2, 1], 0).unwrap();
        assert!(matches!(kan_to_powermlp(&mlp, ConvertOptions::default()), Err(ConvertError::WrongKind { .. })));
        let dom = BoxDomain::symmetric(2, 1.0).unwrap();
        assert!(matches!(powermlp_to_kan(&mlp, &dom), Err(ConvertError::WrongKind { .. })));
    }
}
