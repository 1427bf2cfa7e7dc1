use splinenet::data::{default_domain, gen_function_dataset};
use splinenet::train::{grid_search, train, TrainConfig};
use splinenet::Network;

#[test]
fn early_loss_is_non_increasing_on_ablation_task() {
    let data = gen_function_dataset("ablation_xexp", 1000, 1000, 0, &default_domain()).unwrap();
    for net in [Network::powermlp(&[2, 4, 4, 1], 3, 0).unwrap(), Network::mlp(&[2, 6, 1], 0).unwrap()] {
        let mut net = net;
        let cfg = TrainConfig { epochs: 10, lr: 1e-3, warmup_fraction: 0.0, ..TrainConfig::default() };
        let fit = train(&mut net, &data, &cfg).unwrap();
        for w in fit.loss_curve.windows(2) {
            assert!(w[1] <= w[0], "{}: {:?}", net.name, fit.loss_curve);
        }
    }
}

#[test]
fn grid_search_returns_argmin_on_real_run() {
    let data = gen_function_dataset("ablation_xexp", 300, 300, 1, &default_domain()).unwrap();
    let cfg = TrainConfig { epochs: 100, seed: 1, ..TrainConfig::default() };
    let res = grid_search(|| Network::powermlp(&[2, 4, 1], 3, 1), &data, &cfg).unwrap();
    let best = res.outcomes.iter().filter_map(|o| o.test_rmse).fold(f64::INFINITY, f64::min);
    assert_eq!(res.fit.test_rmse, best);
    assert_eq!(res.outcomes.len(), 10);
    // the returned network is the trained one
    let again = splinenet::train::evaluate_rmse(&res.network, &data.x_test, &data.y_test).unwrap();
    assert_eq!(again, best);
}
