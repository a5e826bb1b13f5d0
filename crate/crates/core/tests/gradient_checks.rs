//! Analytic gradients against central finite differences for every network
//! shape used in training.

mod support;

use spillreg_core::controllers::MlpPolicy;
use spillreg_core::ppo::Critic;
use spillreg_core::{Activation, DenseNet, Policy, PolicyParams, SimRng, StateVariant};
use support::*;

const DRAWS: usize = 25;

#[test]
fn linear_actor_log_prob_gradient() {
    let mut rng = SimRng::seed_from_u64(1);
    for variant in StateVariant::ALL {
        let mut policy = Policy::NeuralPid(PolicyParams {
            variant,
            weights: vec![0.0; variant.dim()],
            bias: 0.0,
            log_std: -1.0,
        });
        for _ in 0..DRAWS {
            let e = check_log_prob(&mut policy, &mut rng);
            assert!(e < TOL, "{variant:?}: relative error {e}");
        }
    }
}

#[test]
fn mlp_actor_log_prob_gradient() {
    let mut rng = SimRng::seed_from_u64(2);
    let variant = StateVariant::PidAct;
    let mut policy = Policy::Mlp(MlpPolicy::new(variant, &[64, 64], scales(variant), &mut rng).unwrap());
    for _ in 0..DRAWS {
        let e = check_log_prob(&mut policy, &mut rng);
        assert!(e < TOL, "relative error {e}");
    }
}

#[test]
fn critic_value_gradient() {
    let mut rng = SimRng::seed_from_u64(3);
    let variant = StateVariant::CdOver;
    let mut critic = Critic::new(variant, &[64, 64], scales(variant), 1.0, &mut rng).unwrap();
    for _ in 0..DRAWS {
        let e = check_critic(&mut critic, variant, &mut rng);
        assert!(e < TOL, "relative error {e}");
    }
}

#[test]
fn dense_net_input_gradient() {
    let mut rng = SimRng::seed_from_u64(4);
    for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
        let net = DenseNet::mlp(&[3, 5, 2], act, 1.0, &mut rng).unwrap();
        for _ in 0..DRAWS {
            let x = randomize(3, &mut rng);
            let w = randomize(2, &mut rng);
            let (_, tape) = net.forward(&x).unwrap();
            let g = net.backward(&tape, &w).unwrap();
            let f = |input: &[f64]| net.predict(input).unwrap().iter().zip(&w).map(|(o, c)| o * c).sum::<f64>();
            let e = max_rel_err(&x, &g.input, f);
            // relu kinks are measure-zero for continuous draws
            assert!(e < TOL, "{act:?}: relative error {e}");
        }
    }
}

#[test]
fn critic_output_scale_multiplies_value_and_gradient() {
    let mut rng = SimRng::seed_from_u64(5);
    let variant = StateVariant::PidAct;
    let unit = Critic::new(variant, &[8, 8], scales(variant), 1.0, &mut rng).unwrap();
    let scaled = Critic { output_scale: 100.0, ..unit.clone() };
    let state = random_state(variant, &mut rng);
    let (mut g1, mut g100) = (vec![0.0; unit.net.num_params()], vec![0.0; unit.net.num_params()]);
    let v1 = unit.accumulate_value_grad(&state, |_| 1.0, &mut g1).unwrap();
    let v100 = scaled.accumulate_value_grad(&state, |_| 1.0, &mut g100).unwrap();
    assert_eq!(v100, 100.0 * v1);
    for (a, b) in g1.iter().zip(&g100) {
        assert!((100.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
    }
}
