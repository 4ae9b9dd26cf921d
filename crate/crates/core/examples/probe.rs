//! Scratch probe: roll learned-filter evaluations and report estimator
//! error statistics near the barrier. Not part of the build proper.

use cbf_core::dynamics::RobotState;
use cbf_core::experiments::{rollout, FilterMode};
use cbf_core::learner::read_checkpoint;
use cbf_core::scenario::load_scenario;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::io::BufReader;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scenario = load_scenario(&args[1]).unwrap();
    let models =
        read_checkpoint(BufReader::new(std::fs::File::open(&args[2]).unwrap())).unwrap();
    let spec = &scenario.barriers[0];
    let model = &models[0];

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let region = scenario.eval_region;
    let mut near_errs: Vec<f64> = Vec::new(); // Ê - ḧ_true at h < 0.5
    let mut unsafe_count = 0;
    for _ in 0..30 {
        let start = RobotState::new(
            rng.gen_range(region[0]..region[1]),
            rng.gen_range(region[2]..region[3]),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let log = rollout(&scenario, FilterMode::Learned(&models), start);
        if log.min_h() <= 0.0 {
            unsafe_count += 1;
        }
        for row in &log.rows {
            let h = spec.value(&row.state, row.t);
            if h < 0.5 {
                let bt = spec.lie_bundle(&row.state, row.t, &scenario.true_params);
                let true_hddot = bt.hddot_drift + bt.input_coeff * row.omega;
                let est = model.estimate(
                    spec,
                    &row.state,
                    row.t,
                    &scenario.nominal_params,
                    row.omega,
                );
                near_errs.push(est - true_hddot);
            }
        }
    }
    near_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = near_errs.len();
    if n == 0 {
        println!("no near-barrier samples");
        return;
    }
    let q = |p: f64| near_errs[((n - 1) as f64 * p) as usize];
    let mean = near_errs.iter().sum::<f64>() / n as f64;
    println!(
        "unsafe {}/30 | near-barrier Ê-error n={n}: mean {mean:+.4} q05 {:+.4} q50 {:+.4} q95 {:+.4}",
        q(0.05),
        q(0.5),
        q(0.95)
    );
}
