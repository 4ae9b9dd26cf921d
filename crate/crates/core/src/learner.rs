//! Online supervised learning of the gap between the nominal and true
//! barrier dynamics.
//!
//! The second total derivative of every supported barrier is affine in the
//! control for both the nominal and the true plant, so their difference is
//! too: it splits into a control-free remainder `Delta(x)` and a
//! control-proportional remainder `Sigma(x)`. A two-channel regressor
//! learns both from labels obtained by centrally differencing the measured
//! barrier values along true-plant rollouts, giving the corrected estimate
//!
//! ```text
//!     E(x, u) = hddot_drift_nominal(x) + input_coeff_nominal(x) u
//!             + Delta(x) + Sigma(x) u
//! ```
//!
//! which replaces the nominal second derivative inside the filter.
//! Training interleaves data collection and optimization: every rollout
//! step pushes one labeled transition into a replay buffer and takes one
//! optimizer step on a uniformly resampled batch.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::barrier::{b_chain, BarrierError, BarrierSpec, EcbfGain};
use crate::control::goto_goal;
use crate::dynamics::{step, RobotState, SystemParams};
use crate::mlp::{Adam, Gradients, Mlp};
use crate::qp::{solve_scalar_qp, HalfspaceConstraint};
use crate::scenario::{FilterLaw, ScenarioConfig};

pub const HIDDEN_WIDTH: usize = 200;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Central second difference `(h_next - 2 h_mid + h_prev) / dt^2`,
/// attributed to the state and control of the middle sample.
pub fn label_hddot(window: [f64; 3], dt: f64) -> f64 {
    (window[2] - 2.0 * window[1] + window[0]) / (dt * dt)
}

/// How a state is presented to the regressor. The heading enters through
/// sine and cosine to avoid the wrap discontinuity; barriers with a moving
/// center also see the offsets to the current center. Positional features
/// are scaled by the workspace half-width so every input stays order one:
/// unscaled offsets grow without bound once a moving center leaves the
/// workspace, which saturates the first tanh layer and wrecks the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputEncoding {
    /// `(x, y, cos theta, sin theta) / (s, s, 1, 1)`
    Static,
    /// `(x, y, cos theta, sin theta, x - cx(t), y - cy(t)) / (s, s, 1, 1, s, s)`
    ObstacleRelative,
}

/// Positional feature scale (the workspace half-width of every scenario).
pub const POSITION_SCALE: f64 = 3.0;

impl InputEncoding {
    pub fn for_barrier(spec: &BarrierSpec) -> Self {
        if spec.is_moving() {
            InputEncoding::ObstacleRelative
        } else {
            InputEncoding::Static
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputEncoding::Static => 4,
            InputEncoding::ObstacleRelative => 6,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            InputEncoding::Static => "static",
            InputEncoding::ObstacleRelative => "obstacle_relative",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "static" => Some(InputEncoding::Static),
            "obstacle_relative" => Some(InputEncoding::ObstacleRelative),
            _ => None,
        }
    }

    pub fn encode(&self, state: &RobotState, t: f64, spec: &BarrierSpec) -> Vec<f64> {
        let (sin_th, cos_th) = state.theta.sin_cos();
        let s = POSITION_SCALE;
        match self {
            InputEncoding::Static => vec![state.x / s, state.y / s, cos_th, sin_th],
            InputEncoding::ObstacleRelative => {
                let c = spec.center_at(t);
                vec![
                    state.x / s,
                    state.y / s,
                    cos_th,
                    sin_th,
                    (state.x - c[0]) / s,
                    (state.y - c[1]) / s,
                ]
            }
        }
    }
}

/// One labeled transition: the state and control of a rollout step together
/// with the measured second derivative of the barrier there.
#[derive(Debug, Clone)]
pub struct TransitionSample {
    pub state: RobotState,
    pub time: f64,
    pub control: f64,
    pub label: f64,
}

/// Fixed-capacity FIFO store with a seeded uniform sampler.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: VecDeque<TransitionSample>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            data: VecDeque::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, sample: TransitionSample) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &TransitionSample {
        &self.data[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionSample> {
        self.data.iter()
    }

    /// Indices of a batch drawn uniformly (with replacement) over the
    /// current contents.
    pub fn sample_indices(&mut self, batch_size: usize) -> Vec<usize> {
        assert!(!self.data.is_empty());
        (0..batch_size)
            .map(|_| self.rng.gen_range(0..self.data.len()))
            .collect()
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Number of rollouts used for data collection.
    pub trajectories: usize,
    /// Steps per rollout.
    pub steps_per_trajectory: usize,
    pub seed: u64,
    /// Odd width of the moving average applied to the barrier series
    /// before differencing; 1 disables smoothing.
    pub label_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            buffer_capacity: 10_000,
            trajectories: 40,
            steps_per_trajectory: 250,
            seed: 7,
            label_window: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.learning_rate > 0.0) {
            return Err(LearnerError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.steps_per_trajectory == 0 {
            return Err(LearnerError::Config(
                "batch size, buffer capacity and steps must be positive".into(),
            ));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(LearnerError::Config(
                "batch size cannot exceed buffer capacity".into(),
            ));
        }
        if self.label_window % 2 == 0 {
            return Err(LearnerError::Config("label window must be odd".into()));
        }
        Ok(())
    }
}

/// The learned correction for one barrier: a two-channel regressor whose
/// outputs are `Delta(x)` and `Sigma(x)`.
#[derive(Debug, Clone)]
pub struct EstimatorModel {
    mlp: Mlp,
    encoding: InputEncoding,
    seed: u64,
}

impl EstimatorModel {
    /// Fresh model for a barrier: hidden layers are seeded, the output
    /// layer starts at zero so the correction is initially the identity.
    pub fn for_barrier(spec: &BarrierSpec, seed: u64) -> Self {
        let encoding = InputEncoding::for_barrier(spec);
        let widths = [encoding.dim(), HIDDEN_WIDTH, HIDDEN_WIDTH, 2];
        Self {
            mlp: Mlp::seeded(&widths, seed),
            encoding,
            seed,
        }
    }

    pub fn encoding(&self) -> InputEncoding {
        self.encoding
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// `(Delta(x), Sigma(x))` at one state.
    pub fn delta_sigma(&self, state: &RobotState, t: f64, spec: &BarrierSpec) -> (f64, f64) {
        let out = self.mlp.forward(&self.encoding.encode(state, t, spec));
        (out[0], out[1])
    }

    /// Corrected estimate of the barrier's second derivative under control
    /// `u`.
    pub fn estimate(
        &self,
        spec: &BarrierSpec,
        state: &RobotState,
        t: f64,
        nominal: &SystemParams,
        u: f64,
    ) -> f64 {
        let bundle = spec.lie_bundle(state, t, nominal);
        let (delta, sigma) = self.delta_sigma(state, t, spec);
        bundle.hddot_drift + bundle.input_coeff * u + delta + sigma * u
    }

    /// The filter condition with the learned correction folded in:
    /// `(input_coeff + Sigma) omega >= -K.eta - hddot_drift - Delta`.
    pub fn corrected_constraint(
        &self,
        spec: &BarrierSpec,
        state: &RobotState,
        t: f64,
        nominal: &SystemParams,
        gain: &EcbfGain,
    ) -> HalfspaceConstraint {
        let bundle = spec.lie_bundle(state, t, nominal);
        let (delta, sigma) = self.delta_sigma(state, t, spec);
        HalfspaceConstraint {
            coeff: bundle.input_coeff + sigma,
            bound: -gain.dot(&bundle.eta()) - bundle.hddot_drift - delta,
        }
    }

    /// Corrected condition for either filter law. The learned terms apply
    /// to the second derivative, so a chain condition shifts the same way
    /// as the exponential one.
    pub fn corrected_constraint_for_law(
        &self,
        spec: &BarrierSpec,
        state: &RobotState,
        t: f64,
        nominal: &SystemParams,
        law: &FilterLaw,
    ) -> Result<HalfspaceConstraint, BarrierError> {
        match law {
            FilterLaw::Ecbf(gain) => Ok(self.corrected_constraint(spec, state, t, nominal, gain)),
            FilterLaw::Hocbf(chain) => {
                let eval = b_chain(chain, spec, state, t, nominal)?;
                let (delta, sigma) = self.delta_sigma(state, t, spec);
                let mut hc = crate::qp::assemble_hocbf(&eval);
                hc.coeff += sigma;
                hc.bound -= delta;
                Ok(hc)
            }
        }
    }
}

/// Mean squared error of the corrected estimate over a batch, and its
/// gradient with respect to the regressor parameters. The nominal terms
/// are constants supplied by `nominal_terms(state, t) -> (drift, coeff)`.
pub fn loss_and_gradient(
    model: &EstimatorModel,
    spec: &BarrierSpec,
    batch: &[&TransitionSample],
    nominal_terms: impl Fn(&RobotState, f64) -> (f64, f64),
) -> (f64, Gradients) {
    assert!(!batch.is_empty());
    let n = batch.len();
    let dim = model.encoding.dim();
    let mut inputs = Vec::with_capacity(n * dim);
    for s in batch {
        inputs.extend_from_slice(&model.encoding.encode(&s.state, s.time, spec));
    }
    let acts = model.mlp.forward_batch(&inputs, n);
    let outputs = acts.outputs();

    let mut loss = 0.0;
    let mut out_grads = vec![0.0; n * 2];
    for (i, s) in batch.iter().enumerate() {
        let (drift, coeff) = nominal_terms(&s.state, s.time);
        let estimate = drift + coeff * s.control + outputs[2 * i] + outputs[2 * i + 1] * s.control;
        let err = estimate - s.label;
        loss += err * err;
        out_grads[2 * i] = 2.0 * err / n as f64;
        out_grads[2 * i + 1] = 2.0 * err * s.control / n as f64;
    }
    loss /= n as f64;

    let mut grads = Gradients::zeros_like(&model.mlp);
    model.mlp.backward_batch(&acts, &out_grads, &mut grads);
    (loss, grads)
}

/// Everything produced by one training run.
#[derive(Debug)]
pub struct TrainingRun {
    /// One model per barrier, in scenario order.
    pub models: Vec<EstimatorModel>,
    /// `(optimizer step, barrier index, batch loss)` for the loss curve.
    pub losses: Vec<(usize, usize, f64)>,
    /// Steps on which the filter reported an empty constraint intersection.
    pub infeasible_steps: usize,
    /// Steps on which a degenerate constraint forced the nominal control.
    pub degenerate_steps: usize,
}

/// Collect rollouts on the true plant and fit one estimator per barrier.
///
/// Each of the configured trajectories starts from a fresh point of the
/// training region. At every step the filter solves the constraint set
/// built from the *current* estimators, applies the control to the true
/// plant, labels the transition one step in arrears (the central
/// difference needs the next barrier value), pushes it into the barrier's
/// replay buffer, and takes one optimizer step per barrier on a resampled
/// batch. Unsafe transitions are retained: they are valid dynamics data.
pub fn learn_cbf(scenario: &ScenarioConfig, config: &TrainConfig) -> TrainingRun {
    config.validate().expect("invalid training configuration");
    let n_barriers = scenario.barriers.len();
    let mut models: Vec<EstimatorModel> = scenario
        .barriers
        .iter()
        .enumerate()
        .map(|(i, b)| EstimatorModel::for_barrier(b, config.seed.wrapping_add(i as u64)))
        .collect();
    let mut optimizers: Vec<Adam> = models
        .iter()
        .map(|m| Adam::new(m.mlp(), config.learning_rate))
        .collect();
    let mut buffers: Vec<ReplayBuffer> = (0..n_barriers)
        .map(|i| {
            ReplayBuffer::new(
                config.buffer_capacity,
                config.seed.wrapping_add(0x5eed + i as u64),
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xc0ffee));
    let mut losses = Vec::new();
    let mut infeasible_steps = 0;
    let mut degenerate_steps = 0;
    let mut update = 0usize;

    // Anneal the step size over the tail of the run; the constant-rate
    // optimizer otherwise keeps wobbling around the fit by an amount that
    // matters at the margins the filter rides.
    let total_updates = config.trajectories * config.steps_per_trajectory;
    let anneal_after = total_updates - total_updates * 15 / 100;

    let halfwidth = (config.label_window - 1) / 2;
    let dt = scenario.dt;

    // Exploration: a control offset drawn once per trajectory. The filtered
    // control is a deterministic function of the state, so without an
    // offset the two regression channels are confounded: only the
    // combination Delta + Sigma*u along the policy manifold is identified,
    // and the filter then solves for controls off that manifold. Holding
    // the offset fixed within a trajectory keeps consecutive controls close,
    // which the central-difference labeler needs; variation across
    // trajectories is what separates the channels.
    let spread = 0.05 * (scenario.omega_box[1] - scenario.omega_box[0]);

    for _ in 0..config.trajectories {
        let mut state = sample_start(scenario, &mut rng);
        let exploration = rng.gen_range(-spread..spread);
        // per-trajectory history for labeling in arrears
        let mut trace: Vec<(RobotState, f64, f64)> = Vec::new(); // (state, t, control)
        let mut h_series: Vec<Vec<f64>> = vec![Vec::new(); n_barriers];

        for j in 0..config.steps_per_trajectory {
            let t = j as f64 * dt;
            let constraints: Vec<HalfspaceConstraint> = scenario
                .barriers
                .iter()
                .zip(&models)
                .map(|(b, m)| {
                    m.corrected_constraint_for_law(
                        b,
                        &state,
                        t,
                        &scenario.nominal_params,
                        &scenario.filter_law,
                    )
                    .expect("scenario validation guarantees an order-2 law")
                })
                .collect();
            let nominal_control = goto_goal(
                &state,
                &scenario.goal,
                scenario.control.k_theta,
                scenario.control.omega_max,
            );
            let filtered = match solve_scalar_qp(nominal_control, &constraints, Some(scenario.omega_box)) {
                Ok(result) => {
                    if !result.feasible {
                        infeasible_steps += 1;
                    }
                    result.omega
                }
                Err(_) => {
                    degenerate_steps += 1;
                    nominal_control.clamp(scenario.omega_box[0], scenario.omega_box[1])
                }
            };
            let omega =
                (filtered + exploration).clamp(scenario.omega_box[0], scenario.omega_box[1]);

            for (b, series) in scenario.barriers.iter().zip(h_series.iter_mut()) {
                series.push(b.value(&state, t));
            }
            trace.push((state, t, omega));

            // Label the step whose smoothed window is now complete.
            if j >= 2 + 2 * halfwidth {
                let center = j - 1 - halfwidth;
                for (bi, series) in h_series.iter().enumerate() {
                    let window = [
                        smoothed(series, center - 1, halfwidth),
                        smoothed(series, center, halfwidth),
                        smoothed(series, center + 1, halfwidth),
                    ];
                    let label = label_hddot(window, dt);
                    let (s, st, u) = trace[center];
                    buffers[bi].push(TransitionSample {
                        state: s,
                        time: st,
                        control: u,
                        label,
                    });
                }
                update += 1;
                if update == anneal_after {
                    for opt in &mut optimizers {
                        opt.learning_rate = config.learning_rate / 10.0;
                    }
                }
                for bi in 0..n_barriers {
                    let indices = buffers[bi].sample_indices(config.batch_size);
                    let batch: Vec<&TransitionSample> =
                        indices.iter().map(|&i| buffers[bi].get(i)).collect();
                    let spec = &scenario.barriers[bi];
                    let nominal = &scenario.nominal_params;
                    let (loss, grads) = loss_and_gradient(&models[bi], spec, &batch, |s, t| {
                        let bundle = spec.lie_bundle(s, t, nominal);
                        (bundle.hddot_drift, bundle.input_coeff)
                    });
                    optimizers[bi].step(models[bi].mlp_mut(), &grads);
                    losses.push((update, bi, loss));
                }
            }

            state = step(&state, omega, &scenario.true_params, dt);
        }
    }

    TrainingRun {
        models,
        losses,
        infeasible_steps,
        degenerate_steps,
    }
}

/// Mean of `series[i-halfwidth ..= i+halfwidth]`.
fn smoothed(series: &[f64], i: usize, halfwidth: usize) -> f64 {
    if halfwidth == 0 {
        return series[i];
    }
    let lo = i - halfwidth;
    let hi = i + halfwidth;
    series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
}

/// Uniform start in the training region with a uniform heading, rejecting
/// points inside any barrier.
pub fn sample_start(scenario: &ScenarioConfig, rng: &mut ChaCha8Rng) -> RobotState {
    use std::f64::consts::PI;
    let region = scenario.train_region;
    for _ in 0..10_000 {
        let s = RobotState::new(
            rng.gen_range(region[0]..region[1]),
            rng.gen_range(region[2]..region[3]),
            rng.gen_range(-PI..PI),
        );
        if scenario.barriers.iter().all(|b| b.value(&s, 0.0) > 0.0) {
            return s;
        }
    }
    panic!("training region lies entirely inside a barrier");
}

// ──────────────────────── checkpoints ────────────────────────

/// Write a set of per-barrier models as a text checkpoint.
///
/// The file starts with `models <count>`; each model block carries a
/// header (layer widths, activation name, input-encoding tag, seed)
/// followed by the flat parameter arrays in `w0 b0 w1 b1 ...` order, one
/// base-10 array per line.
pub fn write_checkpoint<W: Write>(models: &[EstimatorModel], mut out: W) -> Result<(), LearnerError> {
    writeln!(out, "models {}", models.len())?;
    for m in models {
        writeln!(out, "model")?;
        write!(out, "widths")?;
        for w in m.mlp.widths() {
            write!(out, " {w}")?;
        }
        writeln!(out)?;
        writeln!(out, "activation tanh")?;
        writeln!(out, "encoding {}", m.encoding.tag())?;
        writeln!(out, "seed {}", m.seed)?;
        for array in m.mlp.layer_arrays() {
            let mut first = true;
            for v in array {
                if !first {
                    write!(out, " ")?;
                }
                write!(out, "{v}")?;
                first = false;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Parse a checkpoint, rejecting width or encoding mismatches.
pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Vec<EstimatorModel>, LearnerError> {
    let bad = |msg: &str| LearnerError::Checkpoint(msg.to_string());
    let mut lines = reader.lines();
    let mut next_line = move || -> Result<String, LearnerError> {
        match lines.next() {
            Some(l) => Ok(l?),
            None => Err(LearnerError::Checkpoint("unexpected end of file".into())),
        }
    };

    let header = next_line()?;
    let count: usize = header
        .strip_prefix("models ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad("expected `models <count>`"))?;

    let mut models = Vec::with_capacity(count);
    for _ in 0..count {
        if next_line()?.trim() != "model" {
            return Err(bad("expected `model` block"));
        }
        let widths_line = next_line()?;
        let widths: Vec<usize> = widths_line
            .strip_prefix("widths")
            .ok_or_else(|| bad("expected `widths`"))?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("unparseable widths"))?;
        if widths.len() < 2 {
            return Err(bad("need at least two widths"));
        }
        let activation = next_line()?;
        if activation.trim() != "activation tanh" {
            return Err(bad("unsupported activation"));
        }
        let enc_line = next_line()?;
        let encoding = enc_line
            .strip_prefix("encoding ")
            .and_then(InputEncoding::from_tag)
            .ok_or_else(|| bad("unknown input encoding"))?;
        if widths[0] != encoding.dim() {
            return Err(bad("input width does not match the encoding"));
        }
        let seed_line = next_line()?;
        let seed: u64 = seed_line
            .strip_prefix("seed ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("expected `seed <n>`"))?;

        let n_arrays = 2 * (widths.len() - 1);
        let mut arrays = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let line = next_line()?;
            let array: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("unparseable parameter array"))?;
            arrays.push(array);
        }
        let mlp = Mlp::from_layer_arrays(widths, arrays).map_err(LearnerError::Checkpoint)?;
        models.push(EstimatorModel {
            mlp,
            encoding,
            seed,
        });
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::BufReader;

    fn circle() -> BarrierSpec {
        BarrierSpec::circle(0.0, 0.0, 1.5).unwrap()
    }

    fn nominal() -> SystemParams {
        SystemParams::new(0.1, 0.1, 1.0).unwrap()
    }

    #[test]
    fn label_examples() {
        // exact on quadratics
        let dt = 0.1;
        let h = |t: f64| t * t;
        let label = label_hddot([h(0.4), h(0.5), h(0.6)], dt);
        assert_relative_eq!(label, 2.0, epsilon = 1e-10);

        assert_eq!(label_hddot([3.0, 3.0, 3.0], dt), 0.0);

        // sin(t) at t = 0: second derivative is 0
        let dt = 1e-3f64;
        let label = label_hddot([(-dt).sin(), 0.0, dt.sin()], dt);
        assert!(label.abs() <= 1e-6);
    }

    #[test]
    fn buffer_is_fifo_with_capacity() {
        let mut buf = ReplayBuffer::new(3, 0);
        for k in 0..5 {
            buf.push(TransitionSample {
                state: RobotState::new(k as f64, 0.0, 0.0),
                time: 0.0,
                control: 0.0,
                label: k as f64,
            });
        }
        assert_eq!(buf.len(), 3);
        let labels: Vec<f64> = buf.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn buffer_sampling_is_uniform() {
        // chi-square test over 1e5 draws from 20 slots, 19 dof; the 0.01
        // critical value is 36.19
        let mut buf = ReplayBuffer::new(20, 123);
        for k in 0..20 {
            buf.push(TransitionSample {
                state: RobotState::new(0.0, 0.0, 0.0),
                time: 0.0,
                control: 0.0,
                label: k as f64,
            });
        }
        let draws = 100_000;
        let mut counts = [0usize; 20];
        for idx in buf.sample_indices(draws) {
            counts[idx] += 1;
        }
        let expected = draws as f64 / 20.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 36.19, "chi-square statistic {chi2} rejects uniformity");
    }

    #[test]
    fn fresh_estimator_matches_nominal_filter() {
        let spec = circle();
        let p = nominal();
        let model = EstimatorModel::for_barrier(&spec, 3);
        let gain = crate::barrier::pole_placement(&[-1.0, -2.0]).unwrap();
        let s = RobotState::new(2.0, 1.0, 0.7);
        let corrected = model.corrected_constraint(&spec, &s, 0.0, &p, &gain);
        let bundle = spec.lie_bundle(&s, 0.0, &p);
        let plain = crate::qp::assemble_ecbf(&bundle, &gain, &bundle.eta());
        assert_eq!(corrected.coeff, plain.coeff);
        assert_eq!(corrected.bound, plain.bound);
    }

    #[test]
    fn delta_shifts_bound_sigma_shifts_coeff() {
        let spec = circle();
        let p = nominal();
        let mut model = EstimatorModel::for_barrier(&spec, 3);
        // output biases: Delta = 0.5, Sigma = 0
        let n = model.mlp().param_count();
        model.mlp_mut().set_param(n - 2, 0.5);
        let gain = crate::barrier::pole_placement(&[-1.0, -2.0]).unwrap();
        let s = RobotState::new(2.0, 1.0, 0.7);
        let corrected = model.corrected_constraint(&spec, &s, 0.0, &p, &gain);
        let bundle = spec.lie_bundle(&s, 0.0, &p);
        let plain = crate::qp::assemble_ecbf(&bundle, &gain, &bundle.eta());
        assert_eq!(corrected.coeff, plain.coeff);
        assert_relative_eq!(corrected.bound, plain.bound - 0.5);
    }

    #[test]
    fn perfect_labels_give_zero_loss_and_gradient() {
        let spec = circle();
        let p = nominal();
        let model = EstimatorModel::for_barrier(&spec, 4);
        let mk = |x: f64, y: f64, th: f64, u: f64| {
            let s = RobotState::new(x, y, th);
            let b = spec.lie_bundle(&s, 0.0, &p);
            TransitionSample {
                state: s,
                time: 0.0,
                control: u,
                label: b.hddot_drift + b.input_coeff * u, // = E with Delta = Sigma = 0
            }
        };
        let samples = [mk(2.0, 0.0, 0.3, 1.0), mk(-1.0, 2.0, -0.5, -2.0)];
        let batch: Vec<&TransitionSample> = samples.iter().collect();
        let (loss, grads) = loss_and_gradient(&model, &spec, &batch, |s, t| {
            let b = spec.lie_bundle(s, t, &p);
            (b.hddot_drift, b.input_coeff)
        });
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn sigma_output_bias_gradient_is_scaled_by_control() {
        let spec = circle();
        let p = nominal();
        let model = EstimatorModel::for_barrier(&spec, 4);
        let s = RobotState::new(2.0, 0.0, 0.3);
        let bundle = spec.lie_bundle(&s, 0.0, &p);
        let u = 3.0;
        let sample = TransitionSample {
            state: s,
            time: 0.0,
            control: u,
            label: bundle.hddot_drift + bundle.input_coeff * u + 1.0, // error -1
        };
        let (loss, grads) = loss_and_gradient(&model, &spec, &[&sample], |s, t| {
            let b = spec.lie_bundle(s, t, &p);
            (b.hddot_drift, b.input_coeff)
        });
        assert_relative_eq!(loss, 1.0);
        // chain rule on the linear Sigma term: d loss / d bias_1 = 2 e u
        let n = model.mlp().param_count();
        assert_relative_eq!(grads.param(model.mlp(), n - 1), 2.0 * (-1.0) * u);
        assert_relative_eq!(grads.param(model.mlp(), n - 2), 2.0 * (-1.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = circle();
        let mut model = EstimatorModel::for_barrier(&spec, 11);
        let n = model.mlp().param_count();
        model.mlp_mut().set_param(n - 1, 0.25);
        model.mlp_mut().set_param(0, -1.5e-7);

        let mut buf = Vec::new();
        write_checkpoint(std::slice::from_ref(&model), &mut buf).unwrap();
        let loaded = read_checkpoint(BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].encoding(), model.encoding());
        assert_eq!(loaded[0].seed(), model.seed());
        for i in 0..n {
            assert_eq!(loaded[0].mlp().param(i), model.mlp().param(i));
        }
    }

    #[test]
    fn checkpoint_rejects_width_mismatch() {
        let spec = circle();
        let model = EstimatorModel::for_barrier(&spec, 11);
        let mut buf = Vec::new();
        write_checkpoint(std::slice::from_ref(&model), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let tampered = text.replace("widths 4 200 200 2", "widths 4 100 200 2");
        let err = read_checkpoint(BufReader::new(tampered.as_bytes())).unwrap_err();
        assert!(matches!(err, LearnerError::Checkpoint(_)));

        let tampered = text.replace("encoding static", "encoding obstacle_relative");
        assert!(read_checkpoint(BufReader::new(tampered.as_bytes())).is_err());
    }

    #[test]
    fn smoothing_window_averages() {
        let series = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(smoothed(&series, 2, 0), 3.0);
        assert_eq!(smoothed(&series, 2, 1), 3.0);
        assert_eq!(smoothed(&series, 1, 1), 2.0);
    }
}
