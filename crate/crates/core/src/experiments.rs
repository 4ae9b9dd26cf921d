//! Experiment orchestration: filtered rollouts on the true plant, safe-rate
//! evaluation over seeded initial conditions, training entry points, and
//! report emission.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::barrier::{
    b_chain, lipschitz_alpha_min_h, nonlipschitz_alpha_escape_time, BarrierError, BarrierSpec,
};
use crate::control::goto_goal;
use crate::dynamics::{simulate, RobotState, StepDecision, StopReason, TrajectoryLog};
use crate::learner::{learn_cbf, read_checkpoint, write_checkpoint, EstimatorModel, TrainingRun};
use crate::qp::{solve_scalar_qp, HalfspaceConstraint};
use crate::scenario::{FilterLaw, ScenarioConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Learner(#[from] crate::learner::LearnerError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error("{0}")]
    Other(String),
}

/// Which filter drives a rollout.
#[derive(Clone, Copy)]
pub enum FilterMode<'a> {
    /// Constraints assembled from the nominal model alone.
    Nominal,
    /// Constraints corrected by one trained estimator per barrier.
    Learned(&'a [EstimatorModel]),
}

impl FilterMode<'_> {
    fn constraint(
        &self,
        scenario: &ScenarioConfig,
        barrier_index: usize,
        state: &RobotState,
        t: f64,
    ) -> Result<HalfspaceConstraint, BarrierError> {
        let spec = &scenario.barriers[barrier_index];
        let nominal = &scenario.nominal_params;
        match self {
            FilterMode::Nominal => nominal_law_constraint(spec, state, t, nominal, &scenario.filter_law),
            FilterMode::Learned(models) => models[barrier_index].corrected_constraint_for_law(
                spec,
                state,
                t,
                nominal,
                &scenario.filter_law,
            ),
        }
    }
}

/// The uncorrected filter condition for either law.
pub fn nominal_law_constraint(
    spec: &BarrierSpec,
    state: &RobotState,
    t: f64,
    params: &crate::dynamics::SystemParams,
    law: &FilterLaw,
) -> Result<HalfspaceConstraint, BarrierError> {
    match law {
        FilterLaw::Ecbf(gain) => {
            let bundle = spec.lie_bundle(state, t, params);
            Ok(crate::qp::assemble_ecbf(&bundle, gain, &bundle.eta()))
        }
        FilterLaw::Hocbf(chain) => {
            let eval = b_chain(chain, spec, state, t, params)?;
            Ok(crate::qp::assemble_hocbf(&eval))
        }
    }
}

/// Roll the true plant from `initial` under the filtered goal controller.
///
/// Stops on goal entry (checked first, which also ends the log), collision
/// (any barrier below zero), workspace exit, or the step budget. Infeasible
/// filter steps apply the least-max-violation control; a degenerate
/// constraint falls back to the boxed nominal control. Both are flagged in
/// the log rather than aborting the rollout.
pub fn rollout(scenario: &ScenarioConfig, mode: FilterMode, initial: RobotState) -> TrajectoryLog {
    let controller = |t: f64, state: &RobotState| -> StepDecision {
        let h_values: Vec<f64> = scenario
            .barriers
            .iter()
            .map(|b| b.value(state, t))
            .collect();
        let mut constraints = Vec::with_capacity(scenario.barriers.len());
        let mut degenerate = false;
        for i in 0..scenario.barriers.len() {
            match mode.constraint(scenario, i, state, t) {
                Ok(c) => constraints.push(c),
                Err(_) => degenerate = true,
            }
        }
        let nominal_control = goto_goal(
            state,
            &scenario.goal,
            scenario.control.k_theta,
            scenario.control.omega_max,
        );
        match solve_scalar_qp(nominal_control, &constraints, Some(scenario.omega_box)) {
            Ok(result) if !degenerate => StepDecision {
                omega: result.omega,
                h_values,
                slack: result.slack,
                feasible: result.feasible,
                active: result.active,
            },
            _ => {
                // degenerate constraint: apply the boxed nominal control
                let omega = nominal_control.clamp(scenario.omega_box[0], scenario.omega_box[1]);
                let slack = constraints
                    .iter()
                    .map(|c| c.slack(omega))
                    .fold(f64::INFINITY, f64::min);
                StepDecision {
                    omega,
                    h_values,
                    slack,
                    feasible: false,
                    active: omega != nominal_control,
                }
            }
        }
    };

    let stop = |_t: f64, state: &RobotState, h: &[f64]| -> Option<StopReason> {
        if scenario.goal.contains(state) {
            return Some(StopReason::Goal);
        }
        if h.iter().any(|&v| v < 0.0) {
            return Some(StopReason::Collision);
        }
        if !scenario.in_workspace(state.x, state.y) {
            return Some(StopReason::Exit);
        }
        None
    };

    simulate(
        initial,
        controller,
        &scenario.true_params,
        scenario.dt,
        scenario.max_steps,
        stop,
    )
}

// ──────────────────────── evaluation ────────────────────────

/// Outcome of one evaluation rollout.
#[derive(Debug, Clone)]
pub struct RolloutSummary {
    pub initial: RobotState,
    pub reason: StopReason,
    pub steps: usize,
    pub min_h: f64,
    pub goal_reached: bool,
}

/// Aggregate over an evaluation batch. A rollout counts as safe when its
/// minimum barrier value over every step and barrier stays strictly
/// positive.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub rollouts: Vec<RolloutSummary>,
}

impl RunReport {
    pub fn safe_count(&self) -> usize {
        self.rollouts.iter().filter(|r| r.min_h > 0.0).count()
    }

    pub fn goal_count(&self) -> usize {
        self.rollouts.iter().filter(|r| r.goal_reached).count()
    }

    pub fn safe_rate(&self) -> f64 {
        self.safe_count() as f64 / self.rollouts.len() as f64
    }

    pub fn goal_rate(&self) -> f64 {
        self.goal_count() as f64 / self.rollouts.len() as f64
    }

    /// Human-readable table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("rollout  reason      steps  min_h        goal\n");
        for (i, r) in self.rollouts.iter().enumerate() {
            out.push_str(&format!(
                "{:<8} {:<11} {:<6} {:<12.5} {}\n",
                i,
                r.reason.as_str(),
                r.steps,
                r.min_h,
                if r.goal_reached { "yes" } else { "no" }
            ));
        }
        out.push_str(&format!(
            "safe: {}/{} ({:.1}%)   goal: {}/{} ({:.1}%)\n",
            self.safe_count(),
            self.rollouts.len(),
            100.0 * self.safe_rate(),
            self.goal_count(),
            self.rollouts.len(),
            100.0 * self.goal_rate(),
        ));
        out
    }

    /// Machine-readable key/value text.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("samples = {}\n", self.rollouts.len()));
        out.push_str(&format!("safe_count = {}\n", self.safe_count()));
        out.push_str(&format!("safe_rate = {}\n", self.safe_rate()));
        out.push_str(&format!("goal_count = {}\n", self.goal_count()));
        out.push_str(&format!("goal_rate = {}\n", self.goal_rate()));
        for (i, r) in self.rollouts.iter().enumerate() {
            out.push_str(&format!("rollout_{i}.reason = {}\n", r.reason.as_str()));
            out.push_str(&format!("rollout_{i}.steps = {}\n", r.steps));
            out.push_str(&format!("rollout_{i}.min_h = {}\n", r.min_h));
            out.push_str(&format!(
                "rollout_{i}.goal = {}\n",
                r.goal_reached as u8
            ));
            out.push_str(&format!(
                "rollout_{i}.initial = {} {} {}\n",
                r.initial.x, r.initial.y, r.initial.theta
            ));
        }
        out
    }
}

/// Sample `n_samples` initial states from the evaluation region (uniform
/// positions, uniform headings, rejecting starts inside a barrier) and roll
/// out each one under the requested filter. Rollouts run on a worker pool;
/// the report is ordered and reproducible for a fixed seed.
pub fn run_eval(
    scenario: &ScenarioConfig,
    mode: FilterMode,
    n_samples: usize,
    seed: u64,
) -> RunReport {
    assert!(n_samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = scenario.eval_region;
    let mut starts = Vec::with_capacity(n_samples);
    while starts.len() < n_samples {
        let s = RobotState::new(
            rng.gen_range(region[0]..region[1]),
            rng.gen_range(region[2]..region[3]),
            rng.gen_range(-PI..PI),
        );
        if scenario.barriers.iter().all(|b| b.value(&s, 0.0) > 0.0) {
            starts.push(s);
        }
    }

    let rollouts: Vec<RolloutSummary> = starts
        .par_iter()
        .map(|&initial| {
            let log = rollout(scenario, mode, initial);
            RolloutSummary {
                initial,
                reason: log.reason,
                steps: log.rows.len() - 1,
                min_h: log.min_h(),
                goal_reached: log.reason == StopReason::Goal,
            }
        })
        .collect();

    RunReport { rollouts }
}

// ──────────────────────── train / rollout entry points ────────────────────────

/// Train per-barrier estimators for a scenario, then write the checkpoint
/// and a `step,barrier,loss` CSV next to it.
pub fn run_train(scenario: &ScenarioConfig, ckpt_path: &Path) -> Result<TrainingRun, ExperimentError> {
    let run = learn_cbf(scenario, &scenario.train);
    let file = File::create(ckpt_path)?;
    write_checkpoint(&run.models, BufWriter::new(file))?;

    let loss_path = loss_csv_path(ckpt_path);
    let mut loss_file = BufWriter::new(File::create(loss_path)?);
    writeln!(loss_file, "step,barrier,loss")?;
    for (step, barrier, loss) in &run.losses {
        writeln!(loss_file, "{step},{barrier},{loss}")?;
    }
    Ok(run)
}

pub fn loss_csv_path(ckpt_path: &Path) -> PathBuf {
    let mut name = ckpt_path.file_stem().unwrap_or_default().to_os_string();
    name.push(".loss.csv");
    ckpt_path.with_file_name(name)
}

/// Load a checkpoint and check it against the scenario's barrier list.
pub fn load_models(
    scenario: &ScenarioConfig,
    ckpt_path: &Path,
) -> Result<Vec<EstimatorModel>, ExperimentError> {
    let file = File::open(ckpt_path)?;
    let models = read_checkpoint(io::BufReader::new(file))?;
    if models.len() != scenario.barriers.len() {
        return Err(ExperimentError::Other(format!(
            "checkpoint has {} models but the scenario declares {} barriers",
            models.len(),
            scenario.barriers.len()
        )));
    }
    for (m, b) in models.iter().zip(&scenario.barriers) {
        if m.encoding() != crate::learner::InputEncoding::for_barrier(b) {
            return Err(ExperimentError::Other(
                "checkpoint encoding does not match the barrier kind".into(),
            ));
        }
    }
    Ok(models)
}

/// Run a single rollout and write its trajectory CSV.
pub fn run_rollout(
    scenario: &ScenarioConfig,
    mode: FilterMode,
    initial: RobotState,
    out_path: &Path,
) -> Result<TrajectoryLog, ExperimentError> {
    if !scenario.in_workspace(initial.x, initial.y) {
        return Err(ExperimentError::Other(format!(
            "initial state ({}, {}) lies outside the workspace",
            initial.x, initial.y
        )));
    }
    let log = rollout(scenario, mode, initial);
    let file = File::create(out_path)?;
    log.write_csv(BufWriter::new(file))?;
    Ok(log)
}

// ──────────────────────── invariance audit ────────────────────────

/// Per-rollout evidence for the forward-invariance assertion.
///
/// `min_true_margin` is the worst-case margin of the filter condition
/// re-evaluated with the *true* plant derivatives at the applied controls;
/// a rollout with nonnegative margin throughout and positive initial chain
/// values must keep `h > 0` for its entire duration.
#[derive(Debug, Clone)]
pub struct RolloutAudit {
    pub initial_chain_positive: bool,
    pub min_true_margin: f64,
    pub min_h: f64,
}

impl RolloutAudit {
    /// The implication actually asserted: condition satisfied plus interior
    /// start forces positivity.
    pub fn invariance_holds(&self) -> bool {
        !(self.initial_chain_positive && self.min_true_margin >= -1e-9) || self.min_h > 0.0
    }
}

/// Audit a logged rollout against the true-plant filter condition.
pub fn audit_invariance(scenario: &ScenarioConfig, log: &TrajectoryLog) -> RolloutAudit {
    let p = &scenario.true_params;
    let mut min_margin = f64::INFINITY;
    let mut initial_positive = true;

    for (bi, spec) in scenario.barriers.iter().enumerate() {
        let first = &log.rows[0];
        let chain_values = true_chain_values(scenario, spec, &first.state, first.t);
        if chain_values.iter().any(|&b| b <= 0.0) {
            initial_positive = false;
        }
        for row in &log.rows {
            let margin = match &scenario.filter_law {
                FilterLaw::Ecbf(gain) => {
                    let bundle = spec.lie_bundle(&row.state, row.t, p);
                    bundle.hddot_drift + bundle.input_coeff * row.omega + gain.dot(&bundle.eta())
                }
                FilterLaw::Hocbf(chain) => {
                    let eval = b_chain(chain, spec, &row.state, row.t, p)
                        .expect("scenario law has order 2");
                    eval.drift + eval.input_coeff * row.omega + eval.relax
                }
            };
            min_margin = min_margin.min(margin);
        }
        let _ = bi;
    }

    RolloutAudit {
        initial_chain_positive: initial_positive,
        min_true_margin: min_margin,
        min_h: log.min_h(),
    }
}

/// State-only chain values `b_0, b_1` evaluated with the true plant. For
/// the exponential law the chain coefficients come from splitting
/// `s^2 + k_1 s + k_0` into its (real) roots.
pub fn true_chain_values(
    scenario: &ScenarioConfig,
    spec: &BarrierSpec,
    state: &RobotState,
    t: f64,
) -> Vec<f64> {
    let p = &scenario.true_params;
    match &scenario.filter_law {
        FilterLaw::Ecbf(gain) => {
            let k = gain.coefficients();
            assert_eq!(k.len(), 2);
            let disc = k[1] * k[1] - 4.0 * k[0];
            assert!(
                disc >= 0.0,
                "invariance audit needs a real-rooted gain polynomial"
            );
            let c1 = (k[1] - disc.sqrt()) / 2.0;
            let bundle = spec.lie_bundle(state, t, p);
            vec![bundle.h, bundle.hdot + c1 * bundle.h]
        }
        FilterLaw::Hocbf(chain) => b_chain(chain, spec, state, t, p)
            .expect("scenario law has order 2")
            .b_values,
    }
}

// ──────────────────────── demos ────────────────────────

/// Print the invariance counterexample demo: a differentiable but
/// non-Lipschitz class-K bound loses the safe set in finite time, while the
/// Lipschitz companion case never does.
pub fn demo_counterexamples(out: &mut impl Write) -> io::Result<()> {
    writeln!(
        out,
        "safety loss under a non-Lipschitz class-K bound (x' = -1, h ~ x^(3/2), alpha(z) = z^(1/3)):"
    )?;
    writeln!(out, "  x0      escape time   lipschitz companion min h over 10x horizon")?;
    for x0 in [0.25, 1.0, 4.0] {
        let t_escape = nonlipschitz_alpha_escape_time(x0, 1e-4);
        let min_h = lipschitz_alpha_min_h(x0, 1e-4, 10.0 * x0);
        writeln!(out, "  {x0:<7} {t_escape:<13.4} {min_h:.6e}")?;
    }
    writeln!(
        out,
        "the bound h' >= -alpha(h) holds on the safe set in both cases; only the\nLipschitz alpha keeps the interior forward invariant"
    )?;
    Ok(())
}
