//! B-splines on a `(k, G)` knot grid, their truncated-power form, and the
//! spline coefficient constructions for affine maps and ReLU-k.
//!
//! Indices follow the grid convention: knots are `t_{-k} .. t_{G+k}` and
//! B-spline / coefficient indices run `j = -k .. G-1`. Storage is 0-based,
//! so knot `t_i` lives at `knots[i + k]` and coefficient `c_j` at
//! `coeffs[j + k]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Knots closer than this are rejected; truncated-power weights blow up as
/// knots coalesce.
pub const MIN_KNOT_SPACING: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("knot vector has length {got}, expected G + 2k + 1 = {expected}")]
    KnotCount { expected: usize, got: usize },
    #[error("knots must be finite and strictly increasing with spacing >= {MIN_KNOT_SPACING:e} (violated at position {position})")]
    KnotSpacing { position: usize },
    #[error("grid count G must be positive")]
    EmptyGrid,
    #[error("invalid interval [{lo}, {hi}]")]
    BadInterval { lo: f64, hi: f64 },
    #[error("B-spline index j = {j} out of range for order {order} (valid {lo}..={hi})")]
    IndexOutOfRange { j: isize, order: usize, lo: isize, hi: isize },
    #[error("requested order {order} exceeds grid order {grid_order}")]
    OrderTooHigh { order: usize, grid_order: usize },
    #[error("repeated knots in window starting at j = {j}")]
    RepeatedKnots { j: isize },
    #[error("coefficient vector has length {got}, expected G + k = {expected}")]
    CoeffCount { expected: usize, got: usize },
    #[error("affine spline requires order k >= 1")]
    ZeroOrder,
    #[error("ReLU-k spline requires a (k,2)-grid with t_1 = 0 and k >= 1: {0}")]
    GridShape(&'static str),
}

/// A `(k, G)`-grid: `G + 2k + 1` strictly increasing knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    order: usize,
    grid_count: usize,
    knots: Vec<f64>,
}

impl KnotGrid {
    pub fn new(order: usize, grid_count: usize, knots: Vec<f64>) -> Result<Self, SplineError> {
        if grid_count == 0 {
            return Err(SplineError::EmptyGrid);
        }
        let expected = grid_count + 2 * order + 1;
        if knots.len() != expected {
            return Err(SplineError::KnotCount { expected, got: knots.len() });
        }
        if let Some(position) = knots.iter().position(|t| !t.is_finite()) {
            return Err(SplineError::KnotSpacing { position });
        }
        for (i, w) in knots.windows(2).enumerate() {
            if !(w[1] - w[0] >= MIN_KNOT_SPACING) {
                return Err(SplineError::KnotSpacing { position: i + 1 });
            }
        }
        Ok(Self { order, grid_count, knots })
    }

    /// Uniform grid with `t_0 = lo`, `t_G = hi` and `k` extension knots of the
    /// same spacing on each side.
    pub fn uniform(order: usize, grid_count: usize, lo: f64, hi: f64) -> Result<Self, SplineError> {
        if grid_count == 0 {
            return Err(SplineError::EmptyGrid);
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(SplineError::BadInterval { lo, hi });
        }
        let h = (hi - lo) / grid_count as f64;
        let k = order as isize;
        let knots = (-k..=grid_count as isize + k)
            .map(|i| {
                if i == grid_count as isize {
                    hi
                } else {
                    lo + i as f64 * h
                }
            })
            .collect();
        Self::new(order, grid_count, knots)
    }

    /// The default KAN grid: uniform on `[-1, 1]`.
    pub fn default_for(order: usize, grid_count: usize) -> Result<Self, SplineError> {
        Self::uniform(order, grid_count, -1.0, 1.0)
    }

    /// Symmetric `(k, 2)`-grid on `[-e, e]`; `t_1` is exactly zero.
    pub fn symmetric_pair(order: usize, e: f64) -> Result<Self, SplineError> {
        let k = order as isize;
        let knots = (-k..=2 + k).map(|i| (i - 1) as f64 * e).collect();
        if !(e.is_finite() && e > 0.0) {
            return Err(SplineError::BadInterval { lo: -e, hi: e });
        }
        Self::new(order, 2, knots)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn grid_count(&self) -> usize {
        self.grid_count
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of order-`k` B-splines (and spline coefficients): `G + k`.
    pub fn num_basis(&self) -> usize {
        self.grid_count + self.order
    }

    /// Knot `t_i` for `i` in `-k ..= G + k`.
    pub fn knot(&self, i: isize) -> f64 {
        self.knots[(i + self.order as isize) as usize]
    }

    /// `[t_0, t_G]`, the interval on which the B-splines sum to one.
    pub fn inner_range(&self) -> (f64, f64) {
        (self.knot(0), self.knot(self.grid_count as isize))
    }

    /// `[t_{-k}, t_{G+k}]`, outside of which every B-spline vanishes.
    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn check_index(&self, j: isize, order: usize) -> Result<(), SplineError> {
        if order > self.order {
            return Err(SplineError::OrderTooHigh { order, grid_order: self.order });
        }
        let lo = -(self.order as isize);
        let hi = self.grid_count as isize + self.order as isize - order as isize - 1;
        if j < lo || j > hi {
            return Err(SplineError::IndexOutOfRange { j, order, lo, hi });
        }
        Ok(())
    }
}

/// `σ_k(x) = max(0, x)^k`; `σ_0` is the unit step with `σ_0(0) = 1`.
pub fn eval_relu_pow(k: u32, x: f64) -> f64 {
    if k == 0 {
        if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else if x > 0.0 {
        x.powi(k as i32)
    } else {
        0.0
    }
}

/// `B_{j,order,t}(x)` straight from the de Boor-Cox recursion. Exponential in
/// `order`; this is the reference path, use [`basis_values`] for bulk work.
pub fn bspline_recursive(grid: &KnotGrid, j: isize, order: usize, x: f64) -> Result<f64, SplineError> {
    grid.check_index(j, order)?;
    Ok(recurse(grid, j, order, x))
}

fn recurse(grid: &KnotGrid, j: isize, order: usize, x: f64) -> f64 {
    let tj = grid.knot(j);
    if order == 0 {
        return if tj <= x && x < grid.knot(j + 1) { 1.0 } else { 0.0 };
    }
    let k = order as isize;
    let tjk = grid.knot(j + k);
    let tj1 = grid.knot(j + 1);
    let tjk1 = grid.knot(j + k + 1);
    if x < tj || x >= tjk1 {
        return 0.0;
    }
    (x - tj) / (tjk - tj) * recurse(grid, j, order - 1, x)
        + (tjk1 - x) / (tjk1 - tj1) * recurse(grid, j + 1, order - 1, x)
}

/// Reusable buffers for [`basis_values`].
#[derive(Debug, Default, Clone)]
pub struct BasisScratch {
    buf: Vec<f64>,
}

/// All `G + k` order-`k` B-spline values at `x` (index `j + k`), computed with
/// the triangular de Boor-Cox scheme. When `deriv` is given it receives
/// `d/dx B_{j,k,t}(x)`.
pub fn basis_values(grid: &KnotGrid, x: f64, out: &mut [f64], deriv: Option<&mut [f64]>, scratch: &mut BasisScratch) {
    let k = grid.order;
    let t = &grid.knots;
    let nb = grid.num_basis();
    debug_assert_eq!(out.len(), nb);
    let intervals = t.len() - 1;
    let buf = &mut scratch.buf;
    buf.clear();
    buf.extend((0..intervals).map(|i| if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 }));

    let mut deriv = deriv;
    for d in 1..=k {
        if d == k {
            if let Some(dv) = deriv.as_deref_mut() {
                // d/dx B_{i,k} = k (B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1}))
                let kf = k as f64;
                for i in 0..nb {
                    dv[i] = kf * (buf[i] / (t[i + k] - t[i]) - buf[i + 1] / (t[i + k + 1] - t[i + 1]));
                }
            }
        }
        for i in 0..intervals - d {
            let left = (x - t[i]) / (t[i + d] - t[i]) * buf[i];
            let right = (t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1]) * buf[i + 1];
            buf[i] = left + right;
        }
    }
    if k == 0 {
        if let Some(dv) = deriv {
            dv.fill(0.0);
        }
    }
    out.copy_from_slice(&buf[..nb]);
}

/// `Σ_i weights_i · σ_k(x − breakpoints_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerBasisForm {
    pub breakpoints: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: u32,
}

/// Truncated-power weights for the B-spline over `window = (t_j, …, t_{j+k+1})`:
/// `(t_{j+k+1} − t_j) / ∏_{l≠i} (t_l − t_i)`.
pub fn power_weights(window: &[f64]) -> Vec<f64> {
    let span = window[window.len() - 1] - window[0];
    (0..window.len())
        .map(|i| {
            let denom: f64 = window
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != i)
                .map(|(_, &tl)| tl - window[i])
                .product();
            span / denom
        })
        .collect()
}

/// Express `B_{j,k,t}` as a combination of shifted ReLU-k functions.
pub fn bspline_power_form(grid: &KnotGrid, j: isize) -> Result<PowerBasisForm, SplineError> {
    grid.check_index(j, grid.order)?;
    let start = (j + grid.order as isize) as usize;
    let window = &grid.knots[start..start + grid.order + 2];
    // construction already enforces spacing; keep the check for hand-built grids
    if window.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SplineError::RepeatedKnots { j });
    }
    Ok(PowerBasisForm {
        breakpoints: window.to_vec(),
        weights: power_weights(window),
        order: grid.order as u32,
    })
}

pub fn eval_power_form(form: &PowerBasisForm, x: f64) -> f64 {
    let terms: Vec<f64> = form
        .breakpoints
        .iter()
        .zip(&form.weights)
        .map(|(&t, &w)| w * eval_relu_pow(form.order, x - t))
        .collect();
    pairwise_sum(&terms)
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Evaluation backend for [`SplineFunction::eval_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// de Boor-Cox recursion.
    Recursive,
    /// Truncated-power sums.
    PowerForm,
}

/// `Σ_j c_j B_{j,k,t}(x)` over a [`KnotGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFunction {
    grid: KnotGrid,
    coeffs: Vec<f64>,
}

impl SplineFunction {
    pub fn new(grid: KnotGrid, coeffs: Vec<f64>) -> Result<Self, SplineError> {
        let expected = grid.num_basis();
        if coeffs.len() != expected {
            return Err(SplineError::CoeffCount { expected, got: coeffs.len() });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> &KnotGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `c_j` for `j` in `-k ..= G-1`.
    pub fn coeff(&self, j: isize) -> f64 {
        self.coeffs[(j + self.grid.order as isize) as usize]
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with(Backend::Recursive, x)
    }

    pub fn eval_with(&self, backend: Backend, x: f64) -> f64 {
        match backend {
            Backend::Recursive => {
                let mut b = vec![0.0; self.coeffs.len()];
                basis_values(&self.grid, x, &mut b, None, &mut BasisScratch::default());
                pairwise_sum(&b.iter().zip(&self.coeffs).map(|(b, c)| b * c).collect::<Vec<_>>())
            }
            Backend::PowerForm => eval_power_form(&self.to_power_form(), x),
        }
    }

    /// Collapse the spline into one truncated-power form over all
    /// `G + 2k + 1` knots. Exact on all of ℝ, including beyond the last knot.
    pub fn to_power_form(&self) -> PowerBasisForm {
        PowerBasisForm {
            breakpoints: self.grid.knots.clone(),
            weights: spline_power_weights(&self.grid, &self.coeffs),
            order: self.grid.order as u32,
        }
    }
}

/// Weight of `σ_k(x − t_i)` (index `i + k`) in `Σ_j c_j B_{j,k,t}`.
pub fn spline_power_weights(grid: &KnotGrid, coeffs: &[f64]) -> Vec<f64> {
    let k = grid.order;
    let mut weights = vec![0.0; grid.knots.len()];
    for (jj, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let window = &grid.knots[jj..jj + k + 2];
        for (off, w) in power_weights(window).into_iter().enumerate() {
            weights[jj + off] += c * w;
        }
    }
    weights
}

/// Spline equal to `ωx + γ` on `[t_0, t_G]`:
/// `c_j = (Σ_{i=j+1}^{j+k} t_i / k)·ω + γ`.
pub fn affine_spline(omega: f64, gamma: f64, grid: &KnotGrid) -> Result<SplineFunction, SplineError> {
    let k = grid.order;
    if k == 0 {
        return Err(SplineError::ZeroOrder);
    }
    let coeffs = (-(k as isize)..grid.grid_count as isize)
        .map(|j| {
            let mean = (j + 1..=j + k as isize).map(|i| grid.knot(i)).sum::<f64>() / k as f64;
            mean * omega + gamma
        })
        .collect();
    SplineFunction::new(grid.clone(), coeffs)
}

/// Spline equal to `σ_k(x)` on `[t_0, t_2]` of a `(k,2)`-grid with `t_1 = 0`:
/// `c_j = ∏_{l=j+1}^{j+k} σ_1(t_l)`.
pub fn reluk_spline(grid: &KnotGrid) -> Result<SplineFunction, SplineError> {
    let k = grid.order;
    if k == 0 {
        return Err(SplineError::GridShape("order must be at least 1"));
    }
    if grid.grid_count != 2 {
        return Err(SplineError::GridShape("grid count must be 2"));
    }
    if grid.knot(1) != 0.0 {
        return Err(SplineError::GridShape("middle knot t_1 must be 0"));
    }
    let coeffs = (-(k as isize)..2)
        .map(|j| (j + 1..=j + k as isize).map(|l| eval_relu_pow(1, grid.knot(l))).product())
        .collect();
    SplineFunction::new(grid.clone(), coeffs)
}
