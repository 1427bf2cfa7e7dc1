//! Synthetic regression datasets.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::Tensor;
use crate::convert::BoxDomain;
use crate::rng;
use crate::special::{bessel_j0, ellipe, ellipk};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("unknown function {0:?} (expected one of ablation_xexp, bessel_j0, ellipk, ellipe)")]
    UnknownFunction(String),
    #[error("{name} takes {expected} inputs, domain has {got}")]
    Dim { name: &'static str, expected: usize, got: usize },
    #[error("{name}: domain leaves the evaluator's valid range ({reason})")]
    Domain { name: &'static str, reason: String },
    #[error("need at least one training and one test sample")]
    Empty,
    #[error("dataset is inconsistent: {0}")]
    Shape(String),
}

/// Built-in target functions on two inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFn {
    /// `x · exp(−y)`.
    AblationXexp,
    /// `J_0(3 (x + y) + 4)`.
    BesselJ0,
    /// `K(m)` with `m = 0.45 (x² + y²)`.
    Ellipk,
    /// `E(m)` with `m = 0.45 (x² + y²)`.
    Ellipe,
}

const ELLIPTIC_SCALE: f64 = 0.45;

impl TargetFn {
    pub const ALL: [TargetFn; 4] = [TargetFn::AblationXexp, TargetFn::BesselJ0, TargetFn::Ellipk, TargetFn::Ellipe];

    pub fn name(self) -> &'static str {
        match self {
            TargetFn::AblationXexp => "ablation_xexp",
            TargetFn::BesselJ0 => "bessel_j0",
            TargetFn::Ellipk => "ellipk",
            TargetFn::Ellipe => "ellipe",
        }
    }

    pub fn parse(name: &str) -> Result<Self, DataError> {
        Self::ALL.into_iter().find(|f| f.name() == name).ok_or_else(|| DataError::UnknownFunction(name.to_string()))
    }

    pub fn input_dim(self) -> usize {
        2
    }

    fn elliptic_m(x: &[f64]) -> f64 {
        ELLIPTIC_SCALE * (x[0] * x[0] + x[1] * x[1])
    }

    /// Evaluate at one point. Callers check the domain first.
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TargetFn::AblationXexp => x[0] * (-x[1]).exp(),
            TargetFn::BesselJ0 => bessel_j0(3.0 * (x[0] + x[1]) + 4.0),
            TargetFn::Ellipk => ellipk(Self::elliptic_m(x)).unwrap_or(f64::NAN),
            TargetFn::Ellipe => ellipe(Self::elliptic_m(x)).unwrap_or(f64::NAN),
        }
    }

    pub fn check_domain(self, domain: &BoxDomain) -> Result<(), DataError> {
        if domain.dim() != self.input_dim() {
            return Err(DataError::Dim { name: self.name(), expected: self.input_dim(), got: domain.dim() });
        }
        let name = self.name();
        match self {
            TargetFn::AblationXexp => {
                if domain.lower()[1] < -700.0 {
                    return Err(DataError::Domain { name, reason: "exp(-y) overflows for y < -700".into() });
                }
            }
            TargetFn::BesselJ0 => {
                let reach = domain.radius() * 6.0 + 4.0;
                if reach > 1e4 {
                    return Err(DataError::Domain { name, reason: format!("argument up to {reach} is beyond the recurrence's tested range") });
                }
            }
            TargetFn::Ellipk | TargetFn::Ellipe => {
                let r2: f64 = domain.lower().iter().zip(domain.upper()).map(|(a, b)| a.abs().max(b.abs()).powi(2)).sum();
                if ELLIPTIC_SCALE * r2 >= 1.0 {
                    return Err(DataError::Domain { name, reason: format!("m reaches {} >= 1", ELLIPTIC_SCALE * r2) });
                }
            }
        }
        Ok(())
    }
}

/// Train and test split; inputs `n × d`, targets `n × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_train: Tensor,
    pub y_train: Tensor,
    pub x_test: Tensor,
    pub y_test: Tensor,
}

impl Dataset {
    pub fn new(x_train: Tensor, y_train: Tensor, x_test: Tensor, y_test: Tensor) -> Result<Self, DataError> {
        let ok = x_train.rows() == y_train.rows()
            && x_test.rows() == y_test.rows()
            && x_train.cols() == x_test.cols()
            && y_train.cols() == y_test.cols()
            && x_train.rows() > 0
            && x_test.rows() > 0;
        if !ok {
            return Err(DataError::Shape(format!(
                "train {:?}/{:?}, test {:?}/{:?}",
                x_train.shape(),
                y_train.shape(),
                x_test.shape(),
                y_test.shape()
            )));
        }
        Ok(Self { x_train, y_train, x_test, y_test })
    }

    pub fn input_dim(&self) -> usize {
        self.x_train.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.y_train.cols()
    }
}

fn sample(target: TargetFn, n: usize, domain: &BoxDomain, rng: &mut impl Rng) -> (Tensor, Tensor) {
    let dists: Vec<_> = domain.lower().iter().zip(domain.upper()).map(|(&a, &b)| Uniform::new(a, b).expect("validated box")).collect();
    let d = dists.len();
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let p: Vec<f64> = dists.iter().map(|u| u.sample(rng)).collect();
        ys.push(target.eval(&p));
        xs.extend(p);
    }
    (Tensor::new(n, d, xs).unwrap(), Tensor::new(n, 1, ys).unwrap())
}

/// Uniform samples of a built-in target over `domain`. Train points are drawn
/// first, then test points, from the seed's data stream.
pub fn gen_function_dataset(name: &str, n_train: usize, n_test: usize, seed: u64, domain: &BoxDomain) -> Result<Dataset, DataError> {
    let target = TargetFn::parse(name)?;
    target.check_domain(domain)?;
    if n_train == 0 || n_test == 0 {
        return Err(DataError::Empty);
    }
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let (x_train, y_train) = sample(target, n_train, domain, &mut rng);
    let (x_test, y_test) = sample(target, n_test, domain, &mut rng);
    Dataset::new(x_train, y_train, x_test, y_test)
}

/// The default box `[−1, 1]²`.
pub fn default_domain() -> BoxDomain {
    BoxDomain::symmetric(2, 1.0).expect("static box")
}
