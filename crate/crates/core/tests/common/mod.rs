#![allow(dead_code)]

use carl_core::fswactions::MacroAction;
use carl_core::policy::{log_softmax, PolicyParams, DEFAULT_HIDDEN};
use carl_core::ppotrain::{loss_and_grad, Sample, TrainConfig};
use carl_core::twinsim::{Observation, OBS_LEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_params(hidden: &[usize], scale: f64, seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PolicyParams::zeros(hidden);
    let flat: Vec<f64> = (0..p.num_params()).map(|_| rng.gen_range(-scale..scale)).collect();
    p.set_flat(&flat);
    p
}

/// Batch whose importance ratios sit in [0.9, 1.1], well inside the clip
/// band for epsilon 0.2.
pub fn random_batch(params: &PolicyParams, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut o = [0.0; OBS_LEN];
            o.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            let obs = Observation(o);
            let action = MacroAction::from_code(rng.gen_range(0..3)).unwrap();
            let logits = params.forward(obs.as_slice()).unwrap().0;
            let logp = log_softmax(&logits)[action.code()];
            let ratio: f64 = rng.gen_range(0.9..1.1);
            Sample {
                obs,
                action,
                old_log_prob: logp - ratio.ln(),
                advantage: rng.gen_range(-2.0..2.0),
                ret: rng.gen_range(-1.0..1.0),
            }
        })
        .collect()
}

/// Largest relative deviation between the analytic gradient and central
/// differences of the total loss, over every parameter.
pub fn gradient_check(params: &PolicyParams, batch: &[Sample], cfg: &TrainConfig, h: f64) -> f64 {
    let analytic = loss_and_grad(params, batch, cfg).1.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + h;
        probe.set_flat(&x);
        let up = loss_and_grad(&probe, batch, cfg).0.total;
        x[i] = base[i] - h;
        probe.set_flat(&x);
        let down = loss_and_grad(&probe, batch, cfg).0.total;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

pub fn default_gradient_check() -> f64 {
    let params = random_params(&DEFAULT_HIDDEN, 0.3, 17);
    let batch = random_batch(&params, 10, 18);
    gradient_check(&params, &batch, &TrainConfig::default(), 1e-5)
}
