//! KAN, PowerMLP and dense layers, and networks composed of them.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::ad::{silu, AdError, NodeId, Tape, Tensor};
use crate::rng;
use crate::spline::{KnotGrid, SplineError, SplineFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("input has {got} features, layer expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("layer {index}: expects {expected} inputs but previous layer produces {got}")]
    ChainMismatch { index: usize, expected: usize, got: usize },
    #[error("layer {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("network has no layers")]
    Empty,
    #[error("network shape needs at least two dimensions, got {0:?}")]
    Shape(Vec<usize>),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Kan,
    #[serde(rename = "powermlp")]
    PowerMlp,
    Mlp,
}

impl NetworkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Kan => "kan",
            NetworkKind::PowerMlp => "powermlp",
            NetworkKind::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One KAN layer: `out_q = Σ_p u_{q,p} b(x_p) + v_{q,p} spline_{q,p}(x_p)`.
///
/// All edges share `grid`. Spline coefficients for edge `(q, p)` are row
/// `q·n_in + p` of `coeffs`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    pub grid: Arc<KnotGrid>,
    pub u: Tensor,
    pub v: Tensor,
    pub coeffs: Tensor,
}

impl KanLayer {
    pub fn new(grid: KnotGrid, u: Tensor, v: Tensor, coeffs: Tensor) -> Result<Self, LayerError> {
        let layer = Self { grid: Arc::new(grid), u, v, coeffs };
        layer.validate(0)?;
        Ok(layer)
    }

    /// Zero-initialised layer on `grid`.
    pub fn zeros(n_in: usize, n_out: usize, grid: KnotGrid) -> Self {
        let nb = grid.num_basis();
        Self {
            grid: Arc::new(grid),
            u: Tensor::zeros(n_out, n_in),
            v: Tensor::zeros(n_out, n_in),
            coeffs: Tensor::zeros(n_out * n_in, nb),
        }
    }

    pub fn n_in(&self) -> usize {
        self.u.cols()
    }

    pub fn n_out(&self) -> usize {
        self.u.rows()
    }

    pub fn spline(&self, q: usize, p: usize) -> SplineFunction {
        SplineFunction::new((*self.grid).clone(), self.coeffs.row(q * self.n_in() + p).to_vec())
            .expect("coefficient rows match the grid")
    }

    pub fn set_spline_coeffs(&mut self, q: usize, p: usize, c: &[f64]) {
        let nb = self.grid.num_basis();
        let row = q * self.n_in() + p;
        self.coeffs.data_mut()[row * nb..(row + 1) * nb].copy_from_slice(c);
    }

    /// `n_in · n_out · (G + k + 2)`.
    pub fn param_count(&self) -> usize {
        self.n_in() * self.n_out() * (self.grid.num_basis() + 2)
    }

    fn validate(&self, index: usize) -> Result<(), LayerError> {
        let (m, n) = self.u.shape();
        if self.v.shape() != (m, n) {
            return Err(LayerError::Invalid { index, reason: "u and v shapes differ".into() });
        }
        if self.coeffs.shape() != (m * n, self.grid.num_basis()) {
            return Err(LayerError::Invalid { index, reason: "coefficient block does not match grid".into() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        eval_layer(&Layer::Kan(self.clone()), x)
    }
}

/// One PowerMLP layer. Hidden: `α b(x) + σ_k(ωx + γ)`; final: `ωx + γ`.
/// A hidden layer with `alpha = None` drops the basis shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMlpLayer {
    pub k: u32,
    pub omega: Tensor,
    /// `1 × n_out` bias.
    pub gamma: Tensor,
    pub alpha: Option<Tensor>,
    pub is_final: bool,
}

impl PowerMlpLayer {
    pub fn hidden(k: u32, omega: Tensor, gamma: Tensor, alpha: Option<Tensor>) -> Result<Self, LayerError> {
        let layer = Self { k, omega, gamma, alpha, is_final: false };
        layer.validate(0)?;
        Ok(layer)
    }

    pub fn affine(omega: Tensor, gamma: Tensor, k: u32) -> Result<Self, LayerError> {
        let layer = Self { k, omega, gamma, alpha: None, is_final: true };
        layer.validate(0)?;
        Ok(layer)
    }

    pub fn n_in(&self) -> usize {
        self.omega.cols()
    }

    pub fn n_out(&self) -> usize {
        self.omega.rows()
    }

    /// `2·n_in·n_out + n_out` for hidden layers, `n_in·n_out + n_out` for the
    /// final affine layer (and for hidden layers without the basis term).
    pub fn param_count(&self) -> usize {
        let base = self.n_in() * self.n_out() + self.n_out();
        base + self.alpha.as_ref().map_or(0, Tensor::len)
    }

    fn validate(&self, index: usize) -> Result<(), LayerError> {
        let (m, n) = self.omega.shape();
        if self.gamma.shape() != (1, m) {
            return Err(LayerError::Invalid { index, reason: format!("gamma must be 1x{m}") });
        }
        if let Some(a) = &self.alpha {
            if self.is_final {
                return Err(LayerError::Invalid { index, reason: "final layer cannot carry alpha".into() });
            }
            if a.shape() != (m, n) {
                return Err(LayerError::Invalid { index, reason: "alpha shape differs from omega".into() });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        eval_layer(&Layer::PowerMlp(self.clone()), x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    /// `1 × n_out` bias.
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn n_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Kan(KanLayer),
    PowerMlp(PowerMlpLayer),
    Dense(DenseLayer),
}

impl Layer {
    pub fn n_in(&self) -> usize {
        match self {
            Layer::Kan(l) => l.n_in(),
            Layer::PowerMlp(l) => l.n_in(),
            Layer::Dense(l) => l.n_in(),
        }
    }

    pub fn n_out(&self) -> usize {
        match self {
            Layer::Kan(l) => l.n_out(),
            Layer::PowerMlp(l) => l.n_out(),
            Layer::Dense(l) => l.n_out(),
        }
    }

    pub fn kind(&self) -> NetworkKind {
        match self {
            Layer::Kan(_) => NetworkKind::Kan,
            Layer::PowerMlp(_) => NetworkKind::PowerMlp,
            Layer::Dense(_) => NetworkKind::Mlp,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Kan(l) => l.param_count(),
            Layer::PowerMlp(l) => l.param_count(),
            Layer::Dense(l) => l.param_count(),
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Kan(l) => vec![&l.u, &l.v, &l.coeffs],
            Layer::PowerMlp(l) => {
                let mut v = vec![&l.omega, &l.gamma];
                if let Some(a) = &l.alpha {
                    v.push(a);
                }
                v
            }
            Layer::Dense(l) => vec![&l.weight, &l.bias],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Kan(l) => vec![&mut l.u, &mut l.v, &mut l.coeffs],
            Layer::PowerMlp(l) => {
                let mut v = vec![&mut l.omega, &mut l.gamma];
                if let Some(a) = &mut l.alpha {
                    v.push(a);
                }
                v
            }
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
        }
    }

    /// Record this layer on `tape`. Parameter leaf ids are appended to
    /// `param_ids` in [`Layer::params`] order.
    pub fn forward_taped(&self, tape: &mut Tape, x: NodeId, param_ids: &mut Vec<NodeId>) -> Result<NodeId, LayerError> {
        let got = tape.value(x).cols();
        if got != self.n_in() {
            return Err(LayerError::InputDim { expected: self.n_in(), got });
        }
        match self {
            Layer::Kan(l) => {
                let u = tape.leaf(l.u.clone());
                let v = tape.leaf(l.v.clone());
                let c = tape.leaf(l.coeffs.clone());
                param_ids.extend([u, v, c]);
                let bx = tape.silu(x);
                let basis = tape.matmul_bt(bx, u)?;
                let s = tape.spline_eval_batch(x, c, &l.grid, l.n_out())?;
                let spl = tape.edge_sum(s, v)?;
                Ok(tape.add(basis, spl)?)
            }
            Layer::PowerMlp(l) => {
                let w = tape.leaf(l.omega.clone());
                let g = tape.leaf(l.gamma.clone());
                param_ids.extend([w, g]);
                let wx = tape.matmul_bt(x, w)?;
                let pre = tape.add(wx, g)?;
                if l.is_final {
                    return Ok(pre);
                }
                let act = tape.relu_pow(pre, l.k);
                match &l.alpha {
                    Some(alpha) => {
                        let a = tape.leaf(alpha.clone());
                        param_ids.push(a);
                        let bx = tape.silu(x);
                        let short = tape.matmul_bt(bx, a)?;
                        Ok(tape.add(short, act)?)
                    }
                    None => Ok(act),
                }
            }
            Layer::Dense(l) => {
                let w = tape.leaf(l.weight.clone());
                let b = tape.leaf(l.bias.clone());
                param_ids.extend([w, b]);
                let wx = tape.matmul_bt(x, w)?;
                let pre = tape.add(wx, b)?;
                Ok(match l.activation {
                    Activation::Relu => tape.relu_pow(pre, 1),
                    Activation::Identity => pre,
                })
            }
        }
    }
}

fn eval_layer(layer: &Layer, x: &Tensor) -> Result<Tensor, LayerError> {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let out = layer.forward_taped(&mut tape, xi, &mut Vec::new())?;
    Ok(tape.value(out).clone())
}

/// A homogeneous stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub kind: NetworkKind,
    pub k: u32,
    pub input_dim: usize,
    pub layers: Vec<Layer>,
    pub name: String,
    pub seed: u64,
}

/// Scale keeping `σ_k` pre-activations order one: 1 for k ≤ 1,
/// `(1/k!)^{1/k}` otherwise.
pub fn relu_pow_init_scale(k: u32) -> f64 {
    if k <= 1 {
        1.0
    } else {
        let fact: f64 = (1..=k).map(f64::from).product();
        (1.0 / fact).powf(1.0 / k as f64)
    }
}

fn uniform_tensor(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::new(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect()).unwrap()
}

fn check_dims(dims: &[usize]) -> Result<(), LayerError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(LayerError::Shape(dims.to_vec()));
    }
    Ok(())
}

fn shape_name(kind: NetworkKind, dims: &[usize]) -> String {
    let d: Vec<String> = dims.iter().map(usize::to_string).collect();
    format!("{}[{}]", kind, d.join(","))
}

impl Network {
    /// KAN with spline coefficients ~ N(0, 0.1), `u = v = 1`, default grid.
    pub fn kan(dims: &[usize], k: u32, grid_count: usize, seed: u64) -> Result<Self, LayerError> {
        check_dims(dims)?;
        let grid = KnotGrid::default_for(k as usize, grid_count)?;
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (n, m) = (w[0], w[1]);
                let nb = grid.num_basis();
                let coeffs = Tensor::new(m * n, nb, (0..m * n * nb).map(|_| normal.sample(&mut rng)).collect()).unwrap();
                let ones = Tensor::new(m, n, vec![1.0; m * n]).unwrap();
                Layer::Kan(KanLayer { grid: Arc::new(grid.clone()), u: ones.clone(), v: ones, coeffs })
            })
            .collect();
        Ok(Self { kind: NetworkKind::Kan, k, input_dim: dims[0], layers, name: shape_name(NetworkKind::Kan, dims), seed })
    }

    pub fn powermlp(dims: &[usize], k: u32, seed: u64) -> Result<Self, LayerError> {
        Self::powermlp_variant(dims, k, true, seed)
    }

    /// PowerMLP, optionally without the basis shortcut. `ω` is uniform in
    /// `±sqrt(6/fan_in)·s_k`, `α` in `±1/sqrt(fan_in)`; `γ` starts at zero.
    pub fn powermlp_variant(dims: &[usize], k: u32, basis: bool, seed: u64) -> Result<Self, LayerError> {
        check_dims(dims)?;
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (n, m) = (w[0], w[1]);
                let is_final = i == last;
                let scale = if is_final { 1.0 } else { relu_pow_init_scale(k) };
                let omega = uniform_tensor(&mut rng, m, n, (6.0 / n as f64).sqrt() * scale);
                // drawn even when unused so both variants share the same ω
                let alpha = uniform_tensor(&mut rng, m, n, 0.25 / (n as f64).sqrt());
                let alpha = (!is_final && basis).then_some(alpha);
                Layer::PowerMlp(PowerMlpLayer { k, omega, gamma: Tensor::zeros(1, m), alpha, is_final })
            })
            .collect();
        let mut name = shape_name(NetworkKind::PowerMlp, dims);
        if !basis {
            name.push_str(":nobasis");
        }
        Ok(Self { kind: NetworkKind::PowerMlp, k, input_dim: dims[0], layers, name, seed })
    }

    /// ReLU MLP with an identity output layer.
    pub fn mlp(dims: &[usize], seed: u64) -> Result<Self, LayerError> {
        check_dims(dims)?;
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (n, m) = (w[0], w[1]);
                Layer::Dense(DenseLayer {
                    weight: uniform_tensor(&mut rng, m, n, (6.0 / n as f64).sqrt()),
                    bias: Tensor::zeros(1, m),
                    activation: if i == last { Activation::Identity } else { Activation::Relu },
                })
            })
            .collect();
        Ok(Self { kind: NetworkKind::Mlp, k: 1, input_dim: dims[0], layers, name: shape_name(NetworkKind::Mlp, dims), seed })
    }

    pub fn from_layers(kind: NetworkKind, k: u32, input_dim: usize, layers: Vec<Layer>, name: impl Into<String>, seed: u64) -> Result<Self, LayerError> {
        let net = Self { kind, k, input_dim, layers, name: name.into(), seed };
        net.validate()?;
        Ok(net)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::n_out)
    }

    /// `[input_dim, n_1, …, n_L]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim).chain(self.layers.iter().map(Layer::n_out)).collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.dims().into_iter().max().unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Number of nonzero trainable entries.
    pub fn nonzero_param_count(&self) -> usize {
        self.layers.iter().flat_map(Layer::params).flat_map(|t| t.data().iter()).filter(|&&v| v != 0.0).count()
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        if self.layers.is_empty() {
            return Err(LayerError::Empty);
        }
        let mut prev = self.input_dim;
        let last = self.layers.len() - 1;
        for (index, layer) in self.layers.iter().enumerate() {
            if layer.n_in() != prev {
                return Err(LayerError::ChainMismatch { index, expected: layer.n_in(), got: prev });
            }
            if layer.kind() != self.kind {
                return Err(LayerError::Invalid { index, reason: format!("{} layer in a {} network", layer.kind(), self.kind) });
            }
            match layer {
                Layer::Kan(l) => {
                    l.validate(index)?;
                    if l.grid.order() != self.k as usize {
                        return Err(LayerError::Invalid { index, reason: "grid order differs from network order".into() });
                    }
                }
                Layer::PowerMlp(l) => {
                    l.validate(index)?;
                    if l.is_final != (index == last) {
                        return Err(LayerError::Invalid { index, reason: "exactly the last PowerMLP layer must be final".into() });
                    }
                    if l.k != self.k {
                        return Err(LayerError::Invalid { index, reason: "layer order differs from network order".into() });
                    }
                }
                Layer::Dense(l) => {
                    if l.bias.shape() != (1, l.n_out()) {
                        return Err(LayerError::Invalid { index, reason: "bias must be 1 x n_out".into() });
                    }
                }
            }
            prev = layer.n_out();
        }
        Ok(())
    }

    /// Record the full network on `tape`; returns the output node and the
    /// parameter leaf ids in [`Network::params`] order.
    pub fn forward_taped(&self, tape: &mut Tape, x: NodeId) -> Result<(NodeId, Vec<NodeId>), LayerError> {
        let mut ids = Vec::new();
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward_taped(tape, h, &mut ids)?;
        }
        Ok((h, ids))
    }

    /// Batch forward pass, `batch × input_dim → batch × output_dim`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, LayerError> {
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone());
        let (out, _) = self.forward_taped(&mut tape, xi)?;
        Ok(tape.value(out).clone())
    }

    pub fn forward_point(&self, x: &[f64]) -> Result<Vec<f64>, LayerError> {
        Ok(self.forward(&Tensor::new(1, x.len(), x.to_vec())?)?.into_data())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }
}

/// Scalar reference for one KAN edge, used in tests.
pub fn kan_edge(layer: &KanLayer, q: usize, p: usize, x: f64) -> f64 {
    layer.u.get(q, p) * silu(x) + layer.v.get(q, p) * layer.spline(q, p).eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::affine_spline;

    #[test]
    fn table_one_parameter_counts() {
        assert_eq!(Network::kan(&[2, 1, 1], 3, 3, 0).unwrap().param_count(), 24);
        assert_eq!(Network::powermlp(&[2, 4, 1], 3, 0).unwrap().param_count(), 25);
        assert_eq!(Network::mlp(&[2, 6, 1], 0).unwrap().param_count(), 25);
    }

    #[test]
    fn kan_zero_weights_give_zero() {
        let mut net = Network::kan(&[3, 2], 3, 4, 1).unwrap();
        if let Layer::Kan(l) = &mut net.layers[0] {
            l.u = Tensor::zeros(2, 3);
            l.v = Tensor::zeros(2, 3);
        }
        let y = net.forward(&Tensor::new(2, 3, vec![0.1, -0.5, 0.9, 2.0, 0.0, -3.0]).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kan_affine_splines_sum_inputs() {
        let grid = KnotGrid::default_for(3, 4).unwrap();
        let mut layer = KanLayer::zeros(3, 1, grid.clone());
        let aff = affine_spline(1.0, 0.0, &grid).unwrap();
        for p in 0..3 {
            layer.v.set(0, p, 1.0);
            layer.set_spline_coeffs(0, p, aff.coeffs());
        }
        let x = Tensor::new(2, 3, vec![0.2, -0.7, 0.5, 0.99, -1.0, 0.0]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert!((y.get(0, 0) - 0.0).abs() < 1e-14);
        assert!((y.get(1, 0) - (-0.01)).abs() < 1e-14);
    }

    #[test]
    fn kan_single_edge_basis_at_zero() {
        let grid = KnotGrid::default_for(2, 3).unwrap();
        let mut layer = KanLayer::zeros(1, 1, grid);
        layer.u.set(0, 0, 1.0);
        assert_eq!(layer.forward(&Tensor::scalar(0.0)).unwrap().data()[0], 0.0);
    }

    #[test]
    fn kan_matches_edge_reference() {
        let net = Network::kan(&[2, 3], 3, 5, 11).unwrap();
        let Layer::Kan(l) = &net.layers[0] else { unreachable!() };
        let x = [0.3, -1.4];
        let y = net.forward_point(&x).unwrap();
        for (q, yq) in y.iter().enumerate() {
            let r: f64 = (0..2).map(|p| kan_edge(l, q, p, x[p])).sum();
            assert!((yq - r).abs() < 1e-14);
        }
    }

    #[test]
    fn powermlp_elementwise_cases() {
        let l = PowerMlpLayer::hidden(3, Tensor::identity(2), Tensor::zeros(1, 2), Some(Tensor::zeros(2, 2))).unwrap();
        let y = l.forward(&Tensor::new(1, 2, vec![2.0, -1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[8.0, 0.0]);
        let l = PowerMlpLayer::hidden(3, Tensor::zeros(2, 2), Tensor::zeros(1, 2), Some(Tensor::identity(2))).unwrap();
        let y = l.forward(&Tensor::new(1, 2, vec![2.0, -1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[silu(2.0), silu(-1.0)]);
    }

    #[test]
    fn powermlp_k1_without_basis_is_relu_mlp() {
        let mut p = Network::powermlp(&[3, 5, 2], 1, 4).unwrap();
        let mlp = Network::mlp(&[3, 5, 2], 9).unwrap();
        for (pl, ml) in p.layers.iter_mut().zip(&mlp.layers) {
            let (Layer::PowerMlp(pl), Layer::Dense(ml)) = (pl, ml) else { unreachable!() };
            pl.omega = ml.weight.clone();
            pl.gamma = ml.bias.map(|b| b + 0.1);
            if let Some(a) = &mut pl.alpha {
                *a = Tensor::zeros(a.rows(), a.cols());
            }
        }
        let mut mlp = mlp;
        for l in &mut mlp.layers {
            if let Layer::Dense(d) = l {
                d.bias = d.bias.map(|b| b + 0.1);
            }
        }
        let x = Tensor::new(3, 3, vec![0.1, -0.2, 0.3, 1.0, 2.0, -3.0, 0.0, 0.5, -0.5]).unwrap();
        assert_eq!(p.forward(&x).unwrap(), mlp.forward(&x).unwrap());
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(Network::mlp(&[3], 0), Err(LayerError::Shape(_))));
        let mut net = Network::powermlp(&[2, 3, 1], 2, 0).unwrap();
        net.layers.swap(0, 1);
        assert!(matches!(net.validate(), Err(LayerError::ChainMismatch { .. })));
        let net = Network::powermlp(&[2, 3, 1], 2, 0).unwrap();
        assert!(matches!(net.forward_point(&[1.0]), Err(LayerError::InputDim { .. })));
        let bad = PowerMlpLayer::affine(Tensor::zeros(2, 2), Tensor::zeros(1, 3), 3);
        assert!(bad.is_err());
    }

    #[test]
    fn init_scale_values() {
        assert_eq!(relu_pow_init_scale(1), 1.0);
        assert!((relu_pow_init_scale(2) - (0.5f64).sqrt()).abs() < 1e-15);
        assert!((relu_pow_init_scale(3) - (1.0f64 / 6.0).cbrt()).abs() < 1e-15);
    }
}
