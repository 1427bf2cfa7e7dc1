//! RMSE regression training with Adam, a warm-up schedule, learning-rate
//! grid search and a wall-clock benchmark.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{rmse, AdError, Tape, Tensor};
use crate::data::Dataset;
use crate::layers::{LayerError, Network};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("dataset has {data} input features, network expects {net}")]
    DimMismatch { net: usize, data: usize },
    #[error("dataset has {data} targets, network produces {net}")]
    OutputMismatch { net: usize, data: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("every learning rate diverged: {}", summarize(.0))]
    AllDiverged(Vec<LrOutcome>),
    #[error(transparent)]
    Layer(#[from] LayerError),
}

fn summarize(outcomes: &[LrOutcome]) -> String {
    outcomes
        .iter()
        .map(|o| format!("lr={:e}: {}", o.lr, o.error.as_deref().unwrap_or("ok")))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    Mini(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: BatchMode,
    pub lr: f64,
    /// Fraction of epochs spent ramping linearly from `lr / 10` to `lr`.
    pub warmup_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_grid: Vec<f64>,
    /// Record test RMSE after every epoch (excluded from timing).
    pub track_test: bool,
}

/// Ten log-spaced rates from 1e-4 to 1e-1.
pub fn default_lr_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-4.0 + 3.0 * i as f64 / 9.0)).collect()
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch: BatchMode::Full,
            lr: 1e-2,
            warmup_fraction: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_grid: default_lr_grid(),
            track_test: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warm-up fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam moments need beta in [0, 1) and eps > 0");
        }
        if matches!(self.batch, BatchMode::Mini(0)) {
            return bad("minibatch size must be positive");
        }
        Ok(())
    }

    /// Learning rate used in `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let warm = (self.warmup_fraction * self.epochs as f64).ceil() as usize;
        if epoch >= warm {
            return self.lr;
        }
        let start = self.lr / 10.0;
        start + (self.lr - start) * epoch as f64 / warm as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub train_rmse: f64,
    pub test_rmse: f64,
    /// Training RMSE per epoch, measured before that epoch's update.
    pub loss_curve: Vec<f64>,
    /// Per-epoch test RMSE when tracked.
    pub test_curve: Vec<f64>,
    /// Cumulative training seconds at the end of each epoch.
    pub elapsed: Vec<f64>,
    pub seconds: f64,
    pub lr: f64,
    pub best_lr: Option<f64>,
}

/// Adam state for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(shapes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for ((w, &gi), (m, v)) in p.data_mut().iter_mut().zip(g.data()).zip(self.m[i].iter_mut().zip(self.v[i].iter_mut())) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

pub fn evaluate_rmse(net: &Network, x: &Tensor, y: &Tensor) -> Result<f64, TrainError> {
    let pred = net.forward(x)?;
    Ok(rmse(pred.data(), y.data()))
}

fn check_dims(net: &Network, data: &Dataset) -> Result<(), TrainError> {
    if net.input_dim != data.input_dim() {
        return Err(TrainError::DimMismatch { net: net.input_dim, data: data.input_dim() });
    }
    if net.output_dim() != data.output_dim() {
        return Err(TrainError::OutputMismatch { net: net.output_dim(), data: data.output_dim() });
    }
    Ok(())
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let data = idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
    Tensor::new(idx.len(), t.cols(), data).unwrap()
}

/// One optimisation step on `(x, y)`; returns the pre-update loss.
fn step(net: &mut Network, opt: &mut Adam, x: &Tensor, y: &Tensor, lr: f64, epoch: usize) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone());
    let yi = tape.leaf(y.clone());
    let (out, ids) = net.forward_taped(&mut tape, xi)?;
    let loss_id = tape.rmse_loss(out, yi).map_err(LayerError::from)?;
    let loss = tape.value(loss_id).data()[0];
    if !loss.is_finite() {
        return Err(TrainError::Diverged { epoch, loss });
    }
    let grads = match tape.backward(loss_id) {
        Ok(g) => g,
        Err(AdError::NonFinite { .. }) => return Err(TrainError::Diverged { epoch, loss }),
        Err(e) => return Err(LayerError::from(e).into()),
    };
    let grads: Vec<Tensor> = ids.iter().map(|&id| grads.get_or_zeros(id, tape.value(id).shape())).collect();
    let mut params = net.params_mut();
    opt.step(&mut params, &grads, lr);
    if params.iter().any(|p| !p.is_finite()) {
        return Err(TrainError::Diverged { epoch, loss: f64::NAN });
    }
    Ok(loss)
}

/// Train `net` in place. Timing runs from the first forward pass to the last
/// parameter update.
pub fn train(net: &mut Network, data: &Dataset, config: &TrainConfig) -> Result<FitResult, TrainError> {
    config.validate()?;
    check_dims(net, data)?;
    let n = data.x_train.rows();
    let shapes: Vec<usize> = net.params().iter().map(|t| t.len()).collect();
    let mut opt = Adam::new(&shapes, config.beta1, config.beta2, config.eps);
    let mut shuffle_rng = rng::stream(config.seed, rng::STREAM_BATCH);
    let mut order: Vec<usize> = (0..n).collect();

    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut test_curve = Vec::new();
    let mut elapsed = Vec::with_capacity(config.epochs);
    let mut seconds = 0.0;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let start = Instant::now();
        let loss = match config.batch {
            BatchMode::Full => step(net, &mut opt, &data.x_train, &data.y_train, lr, epoch)?,
            BatchMode::Mini(size) => {
                order.shuffle(&mut shuffle_rng);
                let mut sse = 0.0;
                for chunk in order.chunks(size) {
                    let (x, y) = (gather_rows(&data.x_train, chunk), gather_rows(&data.y_train, chunk));
                    let l = step(net, &mut opt, &x, &y, lr, epoch)?;
                    sse += l * l * chunk.len() as f64;
                }
                (sse / n as f64).sqrt()
            }
        };
        seconds += start.elapsed().as_secs_f64();
        loss_curve.push(loss);
        elapsed.push(seconds);
        if config.track_test {
            test_curve.push(evaluate_rmse(net, &data.x_test, &data.y_test)?);
        }
    }
    let train_rmse = evaluate_rmse(net, &data.x_train, &data.y_train)?;
    let test_rmse = evaluate_rmse(net, &data.x_test, &data.y_test)?;
    if !(train_rmse.is_finite() && test_rmse.is_finite()) {
        return Err(TrainError::Diverged { epoch: config.epochs, loss: train_rmse });
    }
    Ok(FitResult { train_rmse, test_rmse, loss_curve, test_curve, elapsed, seconds, lr: config.lr, best_lr: None })
}

/// Result of one grid-search candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrOutcome {
    pub lr: f64,
    pub test_rmse: Option<f64>,
    pub train_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub network: Network,
    pub fit: FitResult,
    pub outcomes: Vec<LrOutcome>,
}

/// Train a fresh network per learning rate (in parallel) and keep the one with
/// the lowest test RMSE; ties go to the smaller rate.
pub fn grid_search<F>(factory: F, data: &Dataset, config: &TrainConfig) -> Result<GridSearchResult, TrainError>
where
    F: Fn() -> Result<Network, LayerError> + Sync,
{
    if config.lr_grid.is_empty() {
        return Err(TrainError::Config("learning-rate grid is empty".into()));
    }
    let mut lrs = config.lr_grid.clone();
    lrs.sort_by(f64::total_cmp);
    let runs: Vec<(f64, Result<(Network, FitResult), TrainError>)> = lrs
        .par_iter()
        .map(|&lr| {
            let cfg = TrainConfig { lr, ..config.clone() };
            let run = factory().map_err(TrainError::from).and_then(|mut net| train(&mut net, data, &cfg).map(|fit| (net, fit)));
            (lr, run)
        })
        .collect();

    let mut outcomes = Vec::with_capacity(runs.len());
    let mut best: Option<(Network, FitResult)> = None;
    for (lr, run) in runs {
        match run {
            Ok((net, fit)) => {
                outcomes.push(LrOutcome { lr, test_rmse: Some(fit.test_rmse), train_rmse: Some(fit.train_rmse), error: None });
                if best.as_ref().is_none_or(|(_, b)| fit.test_rmse < b.test_rmse) {
                    best = Some((net, fit));
                }
            }
            Err(e @ TrainError::Diverged { .. }) => outcomes.push(LrOutcome { lr, test_rmse: None, train_rmse: None, error: Some(e.to_string()) }),
            Err(e) => return Err(e),
        }
    }
    let Some((network, mut fit)) = best else { return Err(TrainError::AllDiverged(outcomes)) };
    fit.best_lr = Some(fit.lr);
    Ok(GridSearchResult { network, fit, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub name: String,
    pub params: usize,
    pub runs: Vec<f64>,
    pub mean_seconds: f64,
}

/// Full-batch training wall clock per network, `repeats` times each, every
/// run from the same initial weights.
pub fn timing_bench(nets: &[Network], data: &Dataset, config: &TrainConfig, repeats: usize) -> Result<Vec<BenchResult>, TrainError> {
    let cfg = TrainConfig { batch: BatchMode::Full, track_test: false, ..config.clone() };
    nets.iter()
        .map(|net| {
            let runs = (0..repeats.max(1))
                .map(|_| {
                    let mut n = net.clone();
                    match train(&mut n, data, &cfg) {
                        Ok(fit) => Ok(fit.seconds),
                        Err(TrainError::Diverged { .. }) => Err(TrainError::Config(format!("{} diverged during benchmark", net.name))),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let mean_seconds = runs.iter().sum::<f64>() / runs.len() as f64;
            Ok(BenchResult { name: net.name.clone(), params: net.param_count(), runs, mean_seconds })
        })
        .collect()
}

/// Loss curves as CSV: `epoch,seconds,lr,train_rmse[,test_rmse]`.
pub fn curve_csv(fit: &FitResult, config: &TrainConfig) -> String {
    let tracked = !fit.test_curve.is_empty();
    let mut s = String::from(if tracked { "epoch,seconds,lr,train_rmse,test_rmse\n" } else { "epoch,seconds,lr,train_rmse\n" });
    for (e, (&l, &t)) in fit.loss_curve.iter().zip(&fit.elapsed).enumerate() {
        let lr = TrainConfig { lr: fit.lr, ..config.clone() }.lr_at(e);
        s.push_str(&format!("{e},{t},{lr},{l}"));
        if tracked {
            s.push_str(&format!(",{}", fit.test_curve[e]));
        }
        s.push('\n');
    }
    s
}

/// Log-scale line plot of RMSE against training seconds, one polyline per
/// `(label, fit)`.
pub fn loss_svg(series: &[(&str, &FitResult)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let curve = |f: &FitResult| if f.test_curve.is_empty() { f.loss_curve.clone() } else { f.test_curve.clone() };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, f)| f.elapsed.iter().copied().zip(curve(f)).filter(|(_, v)| *v > 0.0 && v.is_finite()))
        .collect();
    let tmax = pts.iter().map(|p| p.0).fold(1e-9, f64::max);
    let (lmin, lmax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1.log10()), b.max(p.1.log10())));
    let (lmin, lmax) = if lmin.is_finite() && lmax > lmin { (lmin, lmax) } else { (-1.0, 0.0) };
    let sx = |t: f64| PAD + (W - 2.0 * PAD) * t / tmax;
    let sy = |v: f64| H - PAD - (H - 2.0 * PAD) * (v.log10() - lmin) / (lmax - lmin);

    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    s.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{y}\" x2=\"{x}\" y2=\"{y}\" stroke=\"black\"/><line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{y}\" stroke=\"black\"/>\n",
        y = H - PAD,
        x = W - PAD
    ));
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">seconds (max {:.3})</text>\n", W / 2.0, H - 15.0, tmax));
    s.push_str(&format!("<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">log10 RMSE [{lmin:.2}, {lmax:.2}]</text>\n", H / 2.0, H / 2.0));
    for (i, (label, f)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let poly: Vec<String> = f
            .elapsed
            .iter()
            .zip(curve(f))
            .filter(|(_, v)| *v > 0.0 && v.is_finite())
            .map(|(&t, v)| format!("{:.2},{:.2}", sx(t), sy(v)))
            .collect();
        s.push_str(&format!("<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>\n", poly.join(" ")));
        s.push_str(&format!("<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>\n", W - PAD - 120.0, PAD + 16.0 * i as f64));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_domain, gen_function_dataset};
    use crate::layers::Layer;

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig { epochs: 100, lr: 1e-2, ..Default::default() };
        assert!((cfg.lr_at(0) - 1e-3).abs() < 1e-18);
        assert!((cfg.lr_at(5) - (1e-3 + 9e-3 * 0.5)).abs() < 1e-15);
        assert_eq!(cfg.lr_at(10), 1e-2);
        assert_eq!(cfg.lr_at(99), 1e-2);
        let g = default_lr_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[9] - 1e-1).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch: BatchMode::Mini(0), ..Default::default() }.validate().is_err());
    }

    fn zero_target() -> Dataset {
        let mut d = gen_function_dataset("ablation_xexp", 64, 32, 1, &default_domain()).unwrap();
        d.y_train = Tensor::zeros(64, 1);
        d.y_test = Tensor::zeros(32, 1);
        d
    }

    #[test]
    fn linear_model_learns_zero() {
        let data = zero_target();
        let mut net = Network::powermlp(&[2, 1], 3, 5).unwrap();
        if let Layer::PowerMlp(l) = &mut net.layers[0] {
            l.gamma.data_mut()[0] = 0.7;
        }
        let cfg = TrainConfig { epochs: 200, lr: 0.05, ..Default::default() };
        let fit = train(&mut net, &data, &cfg).unwrap();
        assert_eq!(fit.loss_curve.len(), 200);
        assert!(fit.test_rmse < 1e-2, "{}", fit.test_rmse);
    }

    #[test]
    fn training_is_reproducible() {
        let data = gen_function_dataset("ablation_xexp", 64, 32, 2, &default_domain()).unwrap();
        let cfg = TrainConfig { epochs: 20, lr: 1e-2, batch: BatchMode::Mini(16), ..Default::default() };
        let mut a = Network::powermlp(&[2, 4, 1], 3, 9).unwrap();
        let mut b = a.clone();
        let fa = train(&mut a, &data, &cfg).unwrap();
        let fb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(fa.loss_curve, fb.loss_curve);
        assert_eq!(a, b);
    }

    #[test]
    fn grid_search_picks_converged_and_smallest() {
        let data = zero_target();
        let factory = || Network::powermlp(&[2, 4, 1], 3, 1);
        // a huge rate blows up; the modest one survives
        let cfg = TrainConfig { epochs: 30, lr_grid: vec![1e300, 1e-2], ..Default::default() };
        let res = grid_search(factory, &data, &cfg).unwrap();
        assert_eq!(res.fit.best_lr, Some(1e-2));
        assert!(res.outcomes.iter().any(|o| o.error.is_some()));

        // zero learning-rate effect: identical results, so the smaller rate wins
        let frozen = || {
            let mut n = Network::powermlp(&[2, 1], 3, 1)?;
            if let Layer::PowerMlp(l) = &mut n.layers[0] {
                l.omega = Tensor::zeros(1, 2);
            }
            Ok(n)
        };
        let cfg = TrainConfig { epochs: 3, lr_grid: vec![3e-2, 1e-2, 2e-2], ..Default::default() };
        assert_eq!(grid_search(frozen, &data, &cfg).unwrap().fit.best_lr, Some(1e-2));

        let cfg = TrainConfig { epochs: 5, lr_grid: vec![1e300], ..Default::default() };
        assert!(matches!(grid_search(factory, &data, &cfg), Err(TrainError::AllDiverged(_))));
    }

    #[test]
    fn svg_and_csv_render() {
        let data = zero_target();
        let mut net = Network::mlp(&[2, 3, 1], 0).unwrap();
        let cfg = TrainConfig { epochs: 5, track_test: true, ..Default::default() };
        let fit = train(&mut net, &data, &cfg).unwrap();
        assert_eq!(curve_csv(&fit, &cfg).lines().count(), 6);
        let svg = loss_svg(&[("mlp", &fit)]);
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }
}
