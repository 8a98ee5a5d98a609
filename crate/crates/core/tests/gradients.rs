mod common;

use common::{check_network, layer_probes};
use emv::nn::{build_mini_two_stream, Activation};

#[test]
fn every_layer_kind_matches_finite_differences() {
    for seed in 0..20 {
        for (name, net) in layer_probes(seed) {
            let c = check_network(&net, 2, 64, seed + 100);
            assert!(c.worst < 1e-5, "{name} seed {seed}: relative error {:e}", c.worst);
            assert!(c.kinks * 10 <= c.probes, "{name} seed {seed}: {} of {} probes on kinks", c.kinks, c.probes);
        }
    }
}

#[test]
fn full_network_matches_finite_differences() {
    for seed in 0..4 {
        for act in [Activation::Relu, Activation::Prelu] {
            let net = build_mini_two_stream::<f64>(32, 2, 3, act, seed).unwrap();
            let c = check_network(&net, 2, 4, seed);
            assert!(c.worst < 1e-5, "{act:?} seed {seed}: relative error {:e}", c.worst);
            assert!(c.kinks * 10 <= c.probes, "{act:?} seed {seed}: {} of {} probes on kinks", c.kinks, c.probes);
        }
    }
}
