//! Oracles shared by the test suites: central finite differences and the
//! double-loop advantage sum.
#![allow(dead_code)]

use spillreg_core::ppo::Critic;
use spillreg_core::{DenseNet, Policy, SimRng, StateVariant, StateVector};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between `analytic` and central differences of `f`.
pub fn max_rel_err(params: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let x = p[i];
        p[i] = x + H;
        let up = f(&p);
        p[i] = x - H;
        let down = f(&p);
        p[i] = x;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

pub fn random_state(variant: StateVariant, rng: &mut SimRng) -> StateVector {
    let values: Vec<f64> = variant
        .feature_names()
        .iter()
        .map(|&n| match n {
            "i" => rng.uniform_range(-5.0, 5.0),
            "d" => rng.uniform_range(-5000.0, 5000.0),
            _ => rng.uniform_range(-1.0, 1.0),
        })
        .collect();
    StateVector::new(&values).unwrap()
}

pub fn scales(variant: StateVariant) -> Vec<f64> {
    variant
        .feature_names()
        .iter()
        .map(|&n| match n {
            "i" => 5.0,
            "d" => 5000.0,
            _ => 0.7,
        })
        .collect()
}

pub fn randomize(n: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

/// Weights uniform with variance `1 / fan_in`, biases in [-0.1, 0.1], so
/// outputs stay of order one.
pub fn draw_net_params(net: &DenseNet, rng: &mut SimRng) -> Vec<f64> {
    let mut out = Vec::with_capacity(net.num_params());
    for layer in net.layers() {
        let bound = (3.0 / layer.in_dim as f64).sqrt();
        out.extend((0..layer.weights.len()).map(|_| rng.uniform_range(-bound, bound)));
        out.extend((0..layer.bias.len()).map(|_| rng.uniform_range(-0.1, 0.1)));
    }
    out
}

pub fn check_log_prob(policy: &mut Policy, rng: &mut SimRng) -> f64 {
    let mut params = match policy {
        Policy::NeuralPid(_) => randomize(policy.num_params(), rng),
        Policy::Mlp(m) => {
            let mut p = draw_net_params(&m.net, rng);
            p.push(0.0);
            p
        }
    };
    *params.last_mut().unwrap() = rng.uniform_range(-2.0, 1.0);
    policy.set_params(&params).unwrap();
    let state = random_state(policy.variant(), rng);
    let action = policy.mean(&state).unwrap() + rng.standard_normal() * 0.5;
    let mut grad = vec![0.0; policy.num_params()];
    policy.accumulate_log_prob_grad(&state, action, 1.0, &mut grad).unwrap();
    let mut probe = policy.clone();
    max_rel_err(&params, &grad, |p| {
        probe.set_params(p).unwrap();
        probe.log_prob(&state, action).unwrap()
    })
}

/// Value gradient of `critic` at one random parameter and input draw.
pub fn check_critic(critic: &mut Critic, variant: StateVariant, rng: &mut SimRng) -> f64 {
    let params = draw_net_params(&critic.net, rng);
    critic.net.set_params(&params).unwrap();
    let state = random_state(variant, rng);
    let mut grad = vec![0.0; params.len()];
    critic.accumulate_value_grad(&state, |_| 1.0, &mut grad).unwrap();
    let mut probe = critic.clone();
    max_rel_err(&params, &grad, |p| {
        probe.net.set_params(p).unwrap();
        probe.value(&state).unwrap()
    })
}

/// Advantages as an explicit sum of discounted TD residuals.
pub fn gae_oracle(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut delta = vec![0.0; n];
    for t in 0..n {
        let next = if t + 1 < n && !dones[t] { values[t + 1] } else { 0.0 };
        delta[t] = rewards[t] + gamma * next - values[t];
    }
    let mut adv = vec![0.0; n];
    for t in 0..n {
        let mut weight = 1.0;
        for k in t..n {
            adv[t] += weight * delta[k];
            if dones[k] {
                break;
            }
            weight *= gamma * lambda;
        }
    }
    adv
}
