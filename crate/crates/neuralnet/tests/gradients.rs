use speckle_nn::gradcheck::{all_layer_kinds, check_layer, check_loss, check_model};
use speckle_nn::model::{internet_layers, specklenet_layers};
use speckle_nn::{LayerSpec, LossKind};

const TOL: f64 = 1e-4;
const TRIALS: usize = 20;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (i, layer) in all_layer_kinds().into_iter().enumerate() {
        let r = check_layer(layer, LossKind::Mse, TRIALS, 100 + i as u64).unwrap();
        assert!(r.max_rel_err < TOL, "{layer:?}: rel err {}", r.max_rel_err);
    }
}

#[test]
fn every_loss_matches_finite_differences() {
    for (i, kind) in [LossKind::Npcc { eps: 0.0 }, LossKind::Npcc { eps: 1e-8 }, LossKind::Mse, LossKind::Com { eps: 1e-8 }]
        .into_iter()
        .enumerate()
    {
        let r = check_loss(kind, TRIALS, 200 + i as u64).unwrap();
        assert!(r.max_rel_err < TOL, "{kind:?}: rel err {}", r.max_rel_err);
    }
}

#[test]
fn layers_under_correlation_loss() {
    for layer in [LayerSpec::Conv2d { cin: 2, cout: 1, kernel: 3 }, LayerSpec::UpsampleBilinear2x] {
        let r = check_layer(layer, LossKind::Npcc { eps: 0.0 }, 5, 7).unwrap();
        assert!(r.max_rel_err < TOL, "{layer:?}: rel err {}", r.max_rel_err);
    }
}

#[test]
fn whole_networks_backpropagate_correctly() {
    for variant in [1, 2] {
        let layers = internet_layers(variant, 4, 4, 4).unwrap();
        let r = check_model(&layers, [1, 4, 4], 2, LossKind::Com { eps: 1e-8 }, 2, 11).unwrap();
        assert!(r.max_rel_err < TOL, "variant {variant}: {}", r.max_rel_err);
    }
    let layers = specklenet_layers(4, 16).unwrap();
    let r = check_model(&layers, [1, 16, 16], 2, LossKind::Npcc { eps: 1e-8 }, 2, 12).unwrap();
    assert!(r.max_rel_err < TOL, "specklenet: {}", r.max_rel_err);
}
