//! Closed-form FLOPs and parameter accounting for KAN, PowerMLP and MLP
//! layers. All arithmetic is exact.

use std::fmt;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::layers::{Layer, Network, NetworkKind};

pub type Q = Ratio<i64>;

/// Default cost of one basis evaluation `b(x) = x / (1 + e^{-x})`:
/// negate, exp, add, divide, multiply.
pub const DEFAULT_LAMBDA: i64 = 5;

/// Printed next to any reproduction of the small-model cost table.
pub const REFERENCE_NOTE: &str = "note: the commonly quoted figures are 564 FLOPs for KAN [2,1,1] and 40 for \
PowerMLP [2,4,1]; the per-layer formulas give 612 + 3*lambda and 48 + 2*lambda, which match for no \
lambda >= 0. The formulas are used here; the MLP figure (36) agrees.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlopsError {
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(Q),
    #[error("layer dimensions must be positive, got {d_in} -> {d_out}")]
    ZeroDim { d_in: usize, d_out: usize },
    #[error("no {kind} shape of depth {depth} lands within 5% of {target} parameters")]
    Infeasible { kind: NetworkKind, depth: usize, target: usize },
    #[error("cannot parse {0:?} as a rational number")]
    Parse(String),
}

/// `constant + lambda_coeff · λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cost {
    pub constant: Q,
    pub lambda_coeff: i64,
}

impl Cost {
    pub fn new(constant: Q, lambda_coeff: i64) -> Self {
        Self { constant, lambda_coeff }
    }

    pub fn at(&self, lambda: Q) -> Q {
        self.constant + lambda * self.lambda_coeff
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost::new(self.constant + o.constant, self.lambda_coeff + o.lambda_coeff)
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lambda_coeff {
            0 => write!(f, "{}", self.constant),
            1 => write!(f, "{} + lambda", self.constant),
            c => write!(f, "{} + {}*lambda", self.constant, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Kan,
    PowerMlpHidden,
    /// Hidden PowerMLP layer without the basis shortcut.
    PowerMlpNoBasis,
    /// Final affine layer of a PowerMLP, and every MLP layer.
    Affine,
}

impl LayerKind {
    fn label(self) -> &'static str {
        match self {
            LayerKind::Kan => "kan",
            LayerKind::PowerMlpHidden => "powermlp",
            LayerKind::PowerMlpNoBasis => "powermlp-nobasis",
            LayerKind::Affine => "affine",
        }
    }
}

fn q(n: i64) -> Q {
    Q::from_integer(n)
}

fn check(d_in: usize, d_out: usize) -> Result<(i64, i64), FlopsError> {
    if d_in == 0 || d_out == 0 {
        return Err(FlopsError::ZeroDim { d_in, d_out });
    }
    Ok((d_in as i64, d_out as i64))
}

/// Per-edge KAN cost `9kG + 13.5k² + 2G − 2.5k + 3`.
pub fn kan_edge_flops(k: u32, g: usize) -> Q {
    let (k, g) = (k as i64, g as i64);
    q(9 * k * g) + Q::new(27, 2) * (k * k) + q(2 * g) - Q::new(5, 2) * k + q(3)
}

/// FLOPs of one forward pass through a single layer on one sample.
pub fn flops_layer(kind: LayerKind, d_in: usize, d_out: usize, k: u32, g: usize) -> Result<Cost, FlopsError> {
    let (di, d) = check(d_in, d_out)?;
    let k = k as i64;
    Ok(match kind {
        LayerKind::Affine => Cost::new(q(2 * di * d), 0),
        LayerKind::Kan => Cost::new(kan_edge_flops(k as u32, g) * (di * d), di),
        LayerKind::PowerMlpHidden => Cost::new(q(4 * di * d + (k - 1) * d), di),
        LayerKind::PowerMlpNoBasis => Cost::new(q(2 * di * d + (k - 1) * d), 0),
    })
}

pub fn param_layer(kind: LayerKind, d_in: usize, d_out: usize, k: u32, g: usize) -> usize {
    match kind {
        LayerKind::Affine | LayerKind::PowerMlpNoBasis => d_in * d_out + d_out,
        LayerKind::PowerMlpHidden => 2 * d_in * d_out + d_out,
        LayerKind::Kan => d_in * d_out * (g + k as usize + 2),
    }
}

fn layer_kinds(kind: NetworkKind, n_layers: usize) -> Vec<LayerKind> {
    (0..n_layers)
        .map(|i| match kind {
            NetworkKind::Kan => LayerKind::Kan,
            NetworkKind::Mlp => LayerKind::Affine,
            NetworkKind::PowerMlp if i + 1 == n_layers => LayerKind::Affine,
            NetworkKind::PowerMlp => LayerKind::PowerMlpHidden,
        })
        .collect()
}

/// Trainable parameters of a freshly built network of this shape.
pub fn param_count(kind: NetworkKind, dims: &[usize], k: u32, g: usize) -> usize {
    let kinds = layer_kinds(kind, dims.len().saturating_sub(1));
    dims.windows(2).zip(kinds).map(|(w, lk)| param_layer(lk, w[0], w[1], k, g)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub index: usize,
    pub kind: LayerKind,
    pub d_in: usize,
    pub d_out: usize,
    #[serde(skip)]
    pub flops: Cost,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub name: String,
    pub lambda: Q,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn from_layers(name: impl Into<String>, lambda: Q, specs: &[(LayerKind, usize, usize)], k: u32, g: usize) -> Result<Self, FlopsError> {
        if lambda < q(0) {
            return Err(FlopsError::NegativeLambda(lambda));
        }
        let layers = specs
            .iter()
            .enumerate()
            .map(|(index, &(kind, d_in, d_out))| {
                Ok(LayerCost { index, kind, d_in, d_out, flops: flops_layer(kind, d_in, d_out, k, g)?, params: param_layer(kind, d_in, d_out, k, g) })
            })
            .collect::<Result<_, FlopsError>>()?;
        Ok(Self { name: name.into(), lambda, layers })
    }

    /// Report for a shape as built by the network constructors.
    pub fn for_shape(kind: NetworkKind, dims: &[usize], k: u32, g: usize, lambda: Q) -> Result<Self, FlopsError> {
        let kinds = layer_kinds(kind, dims.len().saturating_sub(1));
        let specs: Vec<_> = dims.windows(2).zip(kinds).map(|(w, lk)| (lk, w[0], w[1])).collect();
        let d: Vec<String> = dims.iter().map(usize::to_string).collect();
        Self::from_layers(format!("{}[{}]", kind, d.join(",")), lambda, &specs, k, g)
    }

    pub fn for_network(net: &Network, lambda: Q) -> Result<Self, FlopsError> {
        if lambda < q(0) {
            return Err(FlopsError::NegativeLambda(lambda));
        }
        let layers = net
            .layers
            .iter()
            .enumerate()
            .map(|(index, l)| {
                // grids may differ between KAN layers
                let (kind, g) = match l {
                    Layer::Kan(kl) => (LayerKind::Kan, kl.grid.grid_count()),
                    Layer::PowerMlp(p) if p.is_final => (LayerKind::Affine, 0),
                    Layer::PowerMlp(p) if p.alpha.is_none() => (LayerKind::PowerMlpNoBasis, 0),
                    Layer::PowerMlp(_) => (LayerKind::PowerMlpHidden, 0),
                    Layer::Dense(_) => (LayerKind::Affine, 0),
                };
                let (d_in, d_out) = (l.n_in(), l.n_out());
                Ok(LayerCost { index, kind, d_in, d_out, flops: flops_layer(kind, d_in, d_out, net.k, g)?, params: l.param_count() })
            })
            .collect::<Result<_, FlopsError>>()?;
        Ok(Self { name: net.name.clone(), lambda, layers })
    }

    pub fn total_flops(&self) -> Cost {
        self.layers.iter().map(|l| l.flops).sum()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.params).sum()
    }

    /// `FLOPs / params` at the report's λ.
    pub fn ratio(&self) -> Q {
        self.total_flops().at(self.lambda) / q(self.total_params() as i64)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}  (lambda = {})\n", self.name, self.lambda);
        s.push_str(&format!("{:>5}  {:<17} {:>6} {:>6} {:>10} {:>22} {:>12}\n", "layer", "kind", "d_in", "d_out", "params", "flops", "flops@lambda"));
        for l in &self.layers {
            s.push_str(&format!(
                "{:>5}  {:<17} {:>6} {:>6} {:>10} {:>22} {:>12}\n",
                l.index,
                l.kind.label(),
                l.d_in,
                l.d_out,
                l.params,
                l.flops.to_string(),
                l.flops.at(self.lambda).to_string()
            ));
        }
        let total = self.total_flops();
        s.push_str(&format!(
            "{:>5}  {:<17} {:>6} {:>6} {:>10} {:>22} {:>12}\n",
            "total",
            "",
            "",
            "",
            self.total_params(),
            total.to_string(),
            total.at(self.lambda).to_string()
        ));
        s.push_str(&format!("flops/params = {} ({:.4})\n", self.ratio(), to_f64(self.ratio())));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,layer,kind,d_in,d_out,params,flops_constant,flops_lambda_coeff,lambda,flops\n");
        let row = |s: &mut String, layer: &str, kind: &str, d_in: String, d_out: String, params: usize, c: Cost| {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.name,
                layer,
                kind,
                d_in,
                d_out,
                params,
                c.constant,
                c.lambda_coeff,
                self.lambda,
                c.at(self.lambda)
            ));
        };
        for l in &self.layers {
            row(&mut s, &l.index.to_string(), l.kind.label(), l.d_in.to_string(), l.d_out.to_string(), l.params, l.flops);
        }
        row(&mut s, "total", "", String::new(), String::new(), self.total_params(), self.total_flops());
        s
    }
}

pub fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// `FLOPs / params` for a network shape.
pub fn ratio(kind: NetworkKind, dims: &[usize], k: u32, g: usize, lambda: Q) -> Result<Q, FlopsError> {
    Ok(CostReport::for_shape(kind, dims, k, g, lambda)?.ratio())
}

/// Limit of the per-layer ratio as `d_in, d_out → ∞` together.
pub fn asymptotic_ratio(kind: NetworkKind, k: u32, g: usize) -> Q {
    match kind {
        NetworkKind::Mlp => q(2),
        NetworkKind::PowerMlp => q(2),
        NetworkKind::Kan => kan_edge_flops(k, g) / q((g + k as usize + 2) as i64),
    }
}

/// Smallest uniform hidden width whose parameter count is within ±5% of
/// `target`. `depth` counts layers, so depth 2 has one hidden layer.
pub fn match_param_budget(target: usize, kind: NetworkKind, depth: usize, k: u32, g: usize, input_dim: usize, output_dim: usize) -> Result<Vec<usize>, FlopsError> {
    let infeasible = FlopsError::Infeasible { kind, depth, target };
    if depth == 0 || input_dim == 0 || output_dim == 0 {
        return Err(infeasible);
    }
    let within = |p: usize| 20 * p.abs_diff(target) <= target;
    let shape = |w: usize| {
        let mut d = vec![input_dim];
        d.extend(std::iter::repeat_n(w, depth - 1));
        d.push(output_dim);
        d
    };
    if depth == 1 {
        let d = shape(0);
        return if within(param_count(kind, &d, k, g)) { Ok(d) } else { Err(infeasible) };
    }
    for w in 1.. {
        let d = shape(w);
        let p = param_count(kind, &d, k, g);
        if within(p) {
            return Ok(d);
        }
        if 20 * p > 21 * target {
            break;
        }
    }
    Err(infeasible)
}

/// Parse `"5"`, `"2.5"` or `"7/2"` exactly.
pub fn parse_rational(s: &str) -> Result<Q, FlopsError> {
    let err = || FlopsError::Parse(s.to_string());
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b): (i64, i64) = (a.trim().parse().map_err(|_| err())?, b.trim().parse().map_err(|_| err())?);
        if b == 0 {
            return Err(err());
        }
        return Ok(Q::new(a, b));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 15 {
        return Err(err());
    }
    let digits = format!("{int}{frac}");
    let num: i64 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| err())? };
    let v = Q::new(num, 10i64.pow(frac.len() as u32));
    Ok(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_formulas() {
        let mlp = CostReport::for_shape(NetworkKind::Mlp, &[2, 6, 1], 1, 0, q(5)).unwrap();
        assert_eq!(mlp.total_flops(), Cost::new(q(36), 0));
        assert_eq!(flops_layer(LayerKind::Kan, 2, 1, 3, 3).unwrap().at(q(0)), q(408));
        assert_eq!(flops_layer(LayerKind::PowerMlpHidden, 2, 4, 3, 0).unwrap().at(q(0)), q(40));
        assert_eq!(kan_edge_flops(3, 3), q(204));
    }

    #[test]
    fn table_one_totals() {
        let kan = CostReport::for_shape(NetworkKind::Kan, &[2, 1, 1], 3, 3, q(0)).unwrap();
        assert_eq!(kan.total_flops(), Cost::new(q(612), 3));
        assert_eq!(kan.total_params(), 24);
        let pm = CostReport::for_shape(NetworkKind::PowerMlp, &[2, 4, 1], 3, 0, q(0)).unwrap();
        assert_eq!(pm.total_flops(), Cost::new(q(48), 2));
        assert_eq!(pm.total_params(), 25);
    }

    #[test]
    fn asymptotics() {
        assert_eq!(asymptotic_ratio(NetworkKind::Kan, 3, 3), Q::new(51, 2));
        assert_eq!(asymptotic_ratio(NetworkKind::Mlp, 1, 0), q(2));
        let big = ratio(NetworkKind::Kan, &[4000, 4000], 3, 3, q(5)).unwrap();
        assert!((to_f64(big) - 25.5).abs() < 1e-3);
    }

    #[test]
    fn budgets() {
        assert_eq!(match_param_budget(25, NetworkKind::PowerMlp, 2, 3, 0, 2, 1).unwrap(), vec![2, 4, 1]);
        assert_eq!(match_param_budget(25, NetworkKind::Mlp, 2, 1, 0, 2, 1).unwrap(), vec![2, 6, 1]);
        assert_eq!(match_param_budget(24, NetworkKind::Kan, 2, 3, 3, 2, 1).unwrap(), vec![2, 1, 1]);
        assert!(match_param_budget(3, NetworkKind::Kan, 2, 3, 3, 2, 1).is_err());
    }

    #[test]
    fn errors_and_parsing() {
        assert!(matches!(CostReport::for_shape(NetworkKind::Mlp, &[2, 1], 1, 0, q(-1)), Err(FlopsError::NegativeLambda(_))));
        assert!(matches!(flops_layer(LayerKind::Affine, 0, 1, 1, 0), Err(FlopsError::ZeroDim { .. })));
        assert_eq!(parse_rational("5").unwrap(), q(5));
        assert_eq!(parse_rational("2.5").unwrap(), Q::new(5, 2));
        assert_eq!(parse_rational("7/2").unwrap(), Q::new(7, 2));
        assert_eq!(parse_rational("-0.25").unwrap(), Q::new(-1, 4));
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn renders() {
        let r = CostReport::for_shape(NetworkKind::PowerMlp, &[2, 4, 1], 3, 0, q(5)).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().ends_with(",48,2,5,58"));
        assert!(r.to_table().contains("48 + 2*lambda"));
    }
}
