mod support;

use capp_core::seqmodel::ModelConfig;
use support::grad::{batch, group_errors, micro, perturbed_model};

#[test]
fn analytic_gradients_match_central_differences() {
    let cfg = micro();
    for seed in [1, 2, 3] {
        let m = perturbed_model(cfg, seed);
        let b = batch(&cfg, seed);
        for (name, err) in group_errors(&m, &b) {
            assert!(err < 1e-4, "seed {seed}: group {name} relative error {err}");
        }
    }
}

#[test]
fn two_layer_gradients_match() {
    let cfg = ModelConfig {
        n_layers: 2,
        ..micro()
    };
    let m = perturbed_model(cfg, 9);
    let b = batch(&cfg, 9);
    for (name, err) in group_errors(&m, &b) {
        assert!(err < 1e-4, "group {name} relative error {err}");
    }
}

#[test]
fn every_group_has_a_nonzero_gradient() {
    let cfg = micro();
    let m = perturbed_model(cfg, 4);
    let mut g = vec![0.0; m.params().len()];
    m.loss_and_grad(&batch(&cfg, 4), &mut g).unwrap();
    for (name, range, _) in m.layout().groups() {
        assert!(
            g[range].iter().any(|&x| x != 0.0),
            "group {name} has zero gradient"
        );
    }
}
