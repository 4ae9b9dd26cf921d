//! Minimum-perturbation safety filter for a scalar control.
//!
//! Each barrier condition is linear in the single control, so the filter's
//! quadratic program is an interval projection: intersect the half-lines
//! `a_i omega >= b_i` (and an optional box), then clamp the nominal control
//! into the resulting interval. No external solver is involved; a brute
//! force grid oracle is provided for cross-checking.

use thiserror::Error;

/// Tolerance below which a control coefficient is treated as zero.
pub const DEGENERATE_COEFF_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QpError {
    /// A constraint has a vanishing control coefficient but demands a
    /// positive bound; no control can satisfy it.
    #[error("constraint {index} is degenerate: |a| <= 1e-12 with bound {bound}")]
    DegenerateConstraint { index: usize, bound: f64 },
    /// The grid oracle found no feasible grid point.
    #[error("no feasible grid point")]
    NoFeasibleGridPoint,
}

/// Linear-in-control inequality `coeff * omega >= bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfspaceConstraint {
    pub coeff: f64,
    pub bound: f64,
}

impl HalfspaceConstraint {
    pub fn new(coeff: f64, bound: f64) -> Self {
        Self { coeff, bound }
    }

    pub fn slack(&self, omega: f64) -> f64 {
        self.coeff * omega - self.bound
    }
}

/// What the filter decided at one step.
#[derive(Debug, Clone, Copy)]
pub struct FilterResult {
    /// The filtered control.
    pub omega: f64,
    /// False when the constraint intersection was empty; `omega` is then
    /// the midpoint of the conflicting interval bounds.
    pub feasible: bool,
    /// Whether some constraint moved the control away from the nominal.
    pub active: bool,
    /// Minimum over constraints of `coeff * omega - bound`.
    pub slack: f64,
}

/// Assemble the exponential-barrier condition
/// `hddot_drift + input_coeff * omega >= -K . eta`
/// as a half-space in the control.
pub fn assemble_ecbf(
    bundle: &crate::barrier::LieBundle,
    gain: &crate::barrier::EcbfGain,
    eta: &[f64],
) -> HalfspaceConstraint {
    HalfspaceConstraint {
        coeff: bundle.input_coeff,
        bound: -gain.dot(eta) - bundle.hddot_drift,
    }
}

/// Assemble the chain condition `drift + input_coeff * omega >= -relax`.
pub fn assemble_hocbf(eval: &crate::barrier::ChainEvaluation) -> HalfspaceConstraint {
    HalfspaceConstraint {
        coeff: eval.input_coeff,
        bound: -eval.relax - eval.drift,
    }
}

/// Project the nominal control onto the intersection of the half-lines and
/// the optional box.
///
/// Feasible case: `omega = clamp(nominal, lo, hi)` where `[lo, hi]` is the
/// computed feasible interval, which is exactly the minimizer of
/// `(omega - nominal)^2 / 2`. Empty intersection: the result is flagged
/// infeasible and carries the least-max-violation control, the midpoint of
/// the conflicting pair of interval bounds.
pub fn solve_scalar_qp(
    nominal: f64,
    constraints: &[HalfspaceConstraint],
    boxed: Option<[f64; 2]>,
) -> Result<FilterResult, QpError> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    if let Some([blo, bhi]) = boxed {
        lo = blo;
        hi = bhi;
    }
    for (index, c) in constraints.iter().enumerate() {
        if c.coeff.abs() <= DEGENERATE_COEFF_TOL {
            if c.bound > 0.0 {
                return Err(QpError::DegenerateConstraint {
                    index,
                    bound: c.bound,
                });
            }
            // 0 >= bound holds for any control; ignore.
            continue;
        }
        let ratio = c.bound / c.coeff;
        if c.coeff > 0.0 {
            lo = lo.max(ratio);
        } else {
            hi = hi.min(ratio);
        }
    }

    let (omega, feasible) = if lo <= hi {
        (nominal.clamp(lo, hi), true)
    } else {
        ((lo + hi) / 2.0, false)
    };
    let slack = min_slack(omega, constraints, boxed);
    Ok(FilterResult {
        omega,
        feasible,
        active: omega != nominal,
        slack,
    })
}

fn min_slack(omega: f64, constraints: &[HalfspaceConstraint], boxed: Option<[f64; 2]>) -> f64 {
    let mut slack = f64::INFINITY;
    for c in constraints {
        slack = slack.min(c.slack(omega));
    }
    if let Some([lo, hi]) = boxed {
        slack = slack.min(omega - lo).min(hi - omega);
    }
    slack
}

/// Grid-search oracle for [`solve_scalar_qp`].
///
/// Scans the box at `grid_step` resolution and returns the grid point
/// closest to the nominal control among those satisfying every constraint
/// with tolerance `grid_step`.
pub fn brute_force_qp_oracle(
    nominal: f64,
    constraints: &[HalfspaceConstraint],
    boxed: [f64; 2],
    grid_step: f64,
) -> Result<f64, QpError> {
    assert!(grid_step > 0.0);
    let [lo, hi] = boxed;
    let n = ((hi - lo) / grid_step).round() as usize;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=n {
        let omega = lo + i as f64 * grid_step;
        let ok = constraints
            .iter()
            .all(|c| c.coeff * omega >= c.bound - grid_step);
        if !ok {
            continue;
        }
        let cost = 0.5 * (omega - nominal) * (omega - nominal);
        if best.map_or(true, |(c, _)| cost < c) {
            best = Some((cost, omega));
        }
    }
    best.map(|(_, omega)| omega)
        .ok_or(QpError::NoFeasibleGridPoint)
}
