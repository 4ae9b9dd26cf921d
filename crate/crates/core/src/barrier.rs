//! Barrier functions, their Lie derivatives along the plant, and the gain
//! machinery that turns them into linear-in-control safety conditions.
//!
//! Every supported barrier is a weighted quadratic distance to a (possibly
//! moving) center:
//!
//! ```text
//!     h(x, y, t) = w0 (x - cx(t))^2 + w1 (y - cy(t))^2 - level
//! ```
//!
//! The safe set is `h >= 0`. None of the barriers depends on the heading,
//! so the control input only appears after differentiating twice along the
//! plant: the relative degree is two wherever the second derivative's
//! control coefficient does not vanish. For a plant with forward speed
//! `v = r u` and turn gain `g = r / L`, writing `dx = x - cx(t)`,
//! `dy = y - cy(t)` and `(vx, vy)` for the center velocity:
//!
//! ```text
//!     h'        = 2 w0 dx (v cos th - vx) + 2 w1 dy (v sin th - vy)
//!     h''       = hddot_drift + input_coeff * omega
//!     hddot_drift = 2 w0 (v cos th - vx)^2 + 2 w1 (v sin th - vy)^2
//!     input_coeff = 2 g v (w1 dy cos th - w0 dx sin th)
//! ```
//!
//! Moving centers are handled by totalizing the time derivative rather than
//! augmenting the state, which is equivalent for constant-velocity centers.

use crate::dynamics::{wrap_angle, RobotState, SystemParams};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("barrier radius must be positive, got {0}")]
    Radius(f64),
    #[error("ellipse axis weights must be positive, got ({0}, {1})")]
    Weights(f64, f64),
    #[error("pole {0} is not strictly negative")]
    NonHurwitz(f64),
    #[error("gain coefficients must be positive for a stable chain, got {0}")]
    UnstableGain(f64),
    #[error(
        "relative degree 2 not certified: max |L_g h| = {max_lg_h}, min |L_g L_f h| = {min_lg_lf_h}"
    )]
    DegreeViolation { max_lg_h: f64, min_lg_lf_h: f64 },
    #[error("no samples left after exclusion")]
    EmptySampleSet,
    #[error("initial state is not in the interior of the safe set: h = {0}")]
    NotInInterior(f64),
    #[error("class-K exponent must be at least 1, got {0}")]
    Exponent(u32),
    #[error("chain coefficient must be positive, got {0}")]
    ChainCoefficient(f64),
    #[error("only chains of order 2 can be evaluated against this plant, got order {0}")]
    ChainOrder(usize),
}

/// A barrier function declaration: the safe set is `h >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum BarrierSpec {
    /// `h = (x - cx)^2 + (y - cy)^2 - radius^2`
    Circle { center: [f64; 2], radius: f64 },
    /// `h = w0 (x - cx)^2 + w1 (y - cy)^2 - 1`
    Ellipse { center: [f64; 2], weights: [f64; 2] },
    /// A circle whose center moves with constant velocity:
    /// `h = (x - cx - vx t)^2 + (y - cy - vy t)^2 - radius^2`
    MovingCircle {
        center: [f64; 2],
        velocity: [f64; 2],
        radius: f64,
    },
}

impl BarrierSpec {
    pub fn circle(cx: f64, cy: f64, radius: f64) -> Result<Self, BarrierError> {
        if !(radius > 0.0) {
            return Err(BarrierError::Radius(radius));
        }
        Ok(BarrierSpec::Circle {
            center: [cx, cy],
            radius,
        })
    }

    pub fn ellipse(cx: f64, cy: f64, w0: f64, w1: f64) -> Result<Self, BarrierError> {
        if !(w0 > 0.0 && w1 > 0.0) {
            return Err(BarrierError::Weights(w0, w1));
        }
        Ok(BarrierSpec::Ellipse {
            center: [cx, cy],
            weights: [w0, w1],
        })
    }

    pub fn moving_circle(
        cx: f64,
        cy: f64,
        vx: f64,
        vy: f64,
        radius: f64,
    ) -> Result<Self, BarrierError> {
        if !(radius > 0.0) {
            return Err(BarrierError::Radius(radius));
        }
        Ok(BarrierSpec::MovingCircle {
            center: [cx, cy],
            velocity: [vx, vy],
            radius,
        })
    }

    /// Whether the barrier's center moves over time.
    pub fn is_moving(&self) -> bool {
        matches!(self, BarrierSpec::MovingCircle { .. })
    }

    /// Center position at time `t`.
    pub fn center_at(&self, t: f64) -> [f64; 2] {
        match self {
            BarrierSpec::Circle { center, .. } | BarrierSpec::Ellipse { center, .. } => *center,
            BarrierSpec::MovingCircle {
                center, velocity, ..
            } => [center[0] + velocity[0] * t, center[1] + velocity[1] * t],
        }
    }

    fn center_velocity(&self) -> [f64; 2] {
        match self {
            BarrierSpec::MovingCircle { velocity, .. } => *velocity,
            _ => [0.0, 0.0],
        }
    }

    fn axis_weights(&self) -> [f64; 2] {
        match self {
            BarrierSpec::Ellipse { weights, .. } => *weights,
            _ => [1.0, 1.0],
        }
    }

    fn level(&self) -> f64 {
        match self {
            BarrierSpec::Circle { radius, .. } | BarrierSpec::MovingCircle { radius, .. } => {
                radius * radius
            }
            BarrierSpec::Ellipse { .. } => 1.0,
        }
    }

    /// Barrier value; `h >= 0` iff the state is in the safe set at time `t`.
    pub fn value(&self, state: &RobotState, t: f64) -> f64 {
        let c = self.center_at(t);
        let w = self.axis_weights();
        let dx = state.x - c[0];
        let dy = state.y - c[1];
        w[0] * dx * dx + w[1] * dy * dy - self.level()
    }

    /// The barrier value and its first two total time derivatives along the
    /// plant parameterized by `params`, split into control-free and
    /// control-proportional parts.
    pub fn lie_bundle(&self, state: &RobotState, t: f64, params: &SystemParams) -> LieBundle {
        let c = self.center_at(t);
        let cv = self.center_velocity();
        let w = self.axis_weights();
        let dx = state.x - c[0];
        let dy = state.y - c[1];
        let v = params.linear_speed();
        let (sin_th, cos_th) = state.theta.sin_cos();
        let rel_vx = v * cos_th - cv[0];
        let rel_vy = v * sin_th - cv[1];

        LieBundle {
            h: w[0] * dx * dx + w[1] * dy * dy - self.level(),
            hdot: 2.0 * (w[0] * dx * rel_vx + w[1] * dy * rel_vy),
            hddot_drift: 2.0 * (w[0] * rel_vx * rel_vx + w[1] * rel_vy * rel_vy),
            input_coeff: 2.0 * params.turn_gain() * v * (w[1] * dy * cos_th - w[0] * dx * sin_th),
        }
    }

    /// First total derivative including the (identically zero) control
    /// term `L_g h * omega`. Used to restate "the first derivative carries
    /// no control" as an executable check.
    pub fn first_derivative_with_control(
        &self,
        state: &RobotState,
        t: f64,
        params: &SystemParams,
        omega: f64,
    ) -> f64 {
        // dh/dtheta = 0 for every supported barrier, so L_g h = 0 and the
        // control contribution vanishes term by term.
        let dh_dtheta = 0.0;
        let lg_h = dh_dtheta * params.turn_gain();
        self.lie_bundle(state, t, params).hdot + lg_h * omega
    }

    /// Transformed coordinates `(h, hdot)` computed with the supplied
    /// (nominal) parameters. The filters pair this with a gain row vector.
    pub fn eta(&self, state: &RobotState, t: f64, nominal: &SystemParams) -> [f64; 2] {
        let b = self.lie_bundle(state, t, nominal);
        [b.h, b.hdot]
    }

    /// Heading at which the second derivative's control coefficient
    /// vanishes (modulo pi): the weighted radial direction.
    pub fn radial_heading(&self, state: &RobotState, t: f64) -> f64 {
        let c = self.center_at(t);
        let w = self.axis_weights();
        (w[1] * (state.y - c[1])).atan2(w[0] * (state.x - c[0]))
    }
}

/// Barrier value and total time derivatives along one plant.
#[derive(Debug, Clone, Copy)]
pub struct LieBundle {
    /// `h`
    pub h: f64,
    /// First total derivative. Carries no control for these barriers.
    pub hdot: f64,
    /// Control-free part of the second total derivative.
    pub hddot_drift: f64,
    /// Coefficient of the control in the second total derivative
    /// (`L_g L_f h` plus the moving-center correction).
    pub input_coeff: f64,
}

impl LieBundle {
    pub fn eta(&self) -> [f64; 2] {
        [self.h, self.hdot]
    }
}

// ──────────────────────── gain design ────────────────────────

/// Row vector `K = (k_0, ..., k_{r-1})` for the exponential barrier
/// condition `h^(r) >= -K eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcbfGain {
    k: Vec<f64>,
}

impl EcbfGain {
    /// Build from raw coefficients `(k_0, ..., k_{r-1})`.
    ///
    /// For orders one and two, positivity of every coefficient is exactly
    /// the stability of the companion polynomial; for higher orders it is
    /// only necessary, so prefer [`pole_placement`] there.
    pub fn from_coefficients(k: Vec<f64>) -> Result<Self, BarrierError> {
        for &ki in &k {
            if !(ki > 0.0) && k.len() <= 2 {
                return Err(BarrierError::UnstableGain(ki));
            }
            if ki < 0.0 {
                return Err(BarrierError::UnstableGain(ki));
            }
        }
        Ok(Self { k })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.k
    }

    pub fn order(&self) -> usize {
        self.k.len()
    }

    /// `K . eta`
    pub fn dot(&self, eta: &[f64]) -> f64 {
        assert_eq!(eta.len(), self.k.len(), "gain/eta dimension mismatch");
        self.k.iter().zip(eta).map(|(k, e)| k * e).sum()
    }
}

/// Expand `prod (s - p_i)` and return its non-leading coefficients as a
/// gain row, ordered from the constant term up.
///
/// Placing every pole strictly in the open left half plane makes the
/// transformed chain `eta' = (F - G K) eta` stable.
pub fn pole_placement(poles: &[f64]) -> Result<EcbfGain, BarrierError> {
    let mut coeffs = vec![1.0]; // descending powers, leading first
    for &p in poles {
        if !(p < 0.0) {
            return Err(BarrierError::NonHurwitz(p));
        }
        // multiply by (s - p)
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * p;
        }
        coeffs = next;
    }
    // coeffs = [1, a_{r-1}, ..., a_0]; k_i is the coefficient of s^i.
    let k = coeffs.into_iter().skip(1).rev().collect();
    Ok(EcbfGain { k })
}

// ──────────────────────── higher-order chains ────────────────────────

/// Differentiable extended class-K function used to damp each stage of a
/// higher-order barrier chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassK {
    /// `alpha(z) = z`
    Linear,
    /// `alpha(z) = sign(z) |z|^q`, the odd extension of the power law.
    Power(u32),
}

impl ClassK {
    pub fn power(q: u32) -> Result<Self, BarrierError> {
        if q < 1 {
            return Err(BarrierError::Exponent(q));
        }
        Ok(ClassK::Power(q))
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            ClassK::Linear => z,
            ClassK::Power(q) => z.signum() * z.abs().powi(*q as i32),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            ClassK::Linear => 1.0,
            ClassK::Power(q) => *q as f64 * z.abs().powi(*q as i32 - 1),
        }
    }
}

/// One stage of a barrier chain: `b_j = b'_{j-1} + c_j alpha_j(b_{j-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStage {
    pub c: f64,
    pub alpha: ClassK,
}

/// Recursive chain `b_0 = h`, `b_j = b'_{j-1} + c_j alpha_j(b_{j-1})`
/// for `j = 1..r`. The constraint exported to the filter enforces
/// `b_r >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HocbfChain {
    stages: Vec<ChainStage>,
}

impl HocbfChain {
    pub fn new(stages: Vec<ChainStage>) -> Result<Self, BarrierError> {
        for s in &stages {
            if !(s.c > 0.0) {
                return Err(BarrierError::ChainCoefficient(s.c));
            }
        }
        Ok(Self { stages })
    }

    /// Chain with the same class-K family at every stage.
    pub fn uniform(alpha: ClassK, coefficients: &[f64]) -> Result<Self, BarrierError> {
        Self::new(
            coefficients
                .iter()
                .map(|&c| ChainStage { c, alpha })
                .collect(),
        )
    }

    pub fn order(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[ChainStage] {
        &self.stages
    }
}

/// The pieces of the chain condition `b_r >= 0`, split so the filter can
/// assemble a half-space in the control.
#[derive(Debug, Clone)]
pub struct ChainEvaluation {
    /// `b_0 .. b_{r-1}`, the state-only chain values.
    pub b_values: Vec<f64>,
    /// Control-free part of `b'_{r-1}`.
    pub drift: f64,
    /// Control coefficient of `b'_{r-1}`.
    pub input_coeff: f64,
    /// `c_r alpha_r(b_{r-1})`, the relaxation on the right-hand side.
    pub relax: f64,
}

/// Evaluate a chain of order two at one state.
///
/// ```text
///     b_0 = h
///     b_1 = h' + c_1 alpha_1(h)
///     b_1' = h'' + c_1 alpha_1'(h) h'
/// ```
///
/// so the exported condition `b_1' + c_2 alpha_2(b_1) >= 0` is linear in
/// the control through `h''`.
pub fn b_chain(
    chain: &HocbfChain,
    spec: &BarrierSpec,
    state: &RobotState,
    t: f64,
    params: &SystemParams,
) -> Result<ChainEvaluation, BarrierError> {
    if chain.order() != 2 {
        return Err(BarrierError::ChainOrder(chain.order()));
    }
    let bundle = spec.lie_bundle(state, t, params);
    let s1 = &chain.stages[0];
    let s2 = &chain.stages[1];
    let b0 = bundle.h;
    let b1 = bundle.hdot + s1.c * s1.alpha.eval(b0);
    Ok(ChainEvaluation {
        b_values: vec![b0, b1],
        drift: bundle.hddot_drift + s1.c * s1.alpha.derivative(b0) * bundle.hdot,
        input_coeff: bundle.input_coeff,
        relax: s2.c * s2.alpha.eval(b1),
    })
}

/// Pick chain coefficients so that every state-only chain value is
/// positive at `x0`.
///
/// For each stage below the top the coefficient is the smallest value (plus
/// the requested margin `delta_j`) that lifts `b_j(x0)` above zero; the top
/// coefficient only scales the constraint relaxation and is set to its
/// margin. Requires `h(x0) > 0`.
pub fn select_cj(
    alphas: &[ClassK],
    deltas: &[f64],
    spec: &BarrierSpec,
    x0: &RobotState,
    t: f64,
    params: &SystemParams,
) -> Result<Vec<f64>, BarrierError> {
    if alphas.len() != 2 || deltas.len() != 2 {
        return Err(BarrierError::ChainOrder(alphas.len()));
    }
    let bundle = spec.lie_bundle(x0, t, params);
    if !(bundle.h > 0.0) {
        return Err(BarrierError::NotInInterior(bundle.h));
    }
    let ratio = -bundle.hdot / alphas[0].eval(bundle.h);
    let c1 = ratio.max(0.0) + deltas[0];
    let c2 = deltas[1];
    debug_assert!(bundle.hdot + c1 * alphas[0].eval(bundle.h) > 0.0);
    Ok(vec![c1, c2])
}

// ──────────────────────── degree certification ────────────────────────

/// Outcome of a relative-degree sweep.
#[derive(Debug, Clone, Copy)]
pub struct DegreeReport {
    /// Largest `|L_g h|` observed (finite difference of `h` along the
    /// control direction).
    pub max_lg_h: f64,
    /// Smallest `|L_g L_f h|` observed on the retained samples.
    pub min_lg_lf_h: f64,
    pub samples_used: usize,
    pub samples_excluded: usize,
}

/// Certify that the barrier has relative degree two on the sampled states.
///
/// `L_g h` is measured numerically (central difference of `h` along the
/// control direction) so the check does not trust the analytic gradient.
/// Samples whose heading lies within `exclusion_band` radians of the
/// weighted radial direction are dropped: the control coefficient
/// legitimately vanishes there and the filter handles that case separately.
pub fn relative_degree_check(
    spec: &BarrierSpec,
    samples: &[(RobotState, f64)],
    params: &SystemParams,
    exclusion_band: f64,
) -> Result<DegreeReport, BarrierError> {
    let eps = 1e-4;
    let gain = params.turn_gain();
    let mut max_lg_h = 0.0_f64;
    let mut min_lg_lf_h = f64::INFINITY;
    let mut used = 0;
    let mut excluded = 0;

    for (state, t) in samples {
        let radial = spec.radial_heading(state, *t);
        let off = wrap_angle(state.theta - radial).abs();
        let dist_to_radial_line = off.min(PI - off);
        if dist_to_radial_line < exclusion_band {
            excluded += 1;
            continue;
        }
        used += 1;

        let plus = RobotState::new(state.x, state.y, state.theta + eps * gain);
        let minus = RobotState::new(state.x, state.y, state.theta - eps * gain);
        let lg_h = (spec.value(&plus, *t) - spec.value(&minus, *t)) / (2.0 * eps);
        max_lg_h = max_lg_h.max(lg_h.abs());

        let bundle = spec.lie_bundle(state, *t, params);
        min_lg_lf_h = min_lg_lf_h.min(bundle.input_coeff.abs());
    }

    if used == 0 {
        return Err(BarrierError::EmptySampleSet);
    }
    if max_lg_h > 1e-9 || !(min_lg_lf_h > 0.0) {
        return Err(BarrierError::DegreeViolation {
            max_lg_h,
            min_lg_lf_h,
        });
    }
    Ok(DegreeReport {
        max_lg_h,
        min_lg_lf_h,
        samples_used: used,
        samples_excluded: excluded,
    })
}

// ──────────────────────── invariance counterexamples ────────────────────────

/// Safety loss in finite time when the class-K bound is not Lipschitz at
/// zero.
///
/// Simulates `x' = -1` from `x0 > 0` with `h(x) = (2/3)^{3/2} sign(x)
/// |x|^{3/2}`, for which `h' = -h^{1/3}` holds exactly on the safe set, and
/// returns the first time `h <= 0`. The crossing happens at `t = x0` even
/// though the differential inequality is satisfied everywhere it applies.
pub fn nonlipschitz_alpha_escape_time(x0: f64, dt: f64) -> f64 {
    assert!(x0 > 0.0 && dt > 0.0);
    let scale = (2.0f64 / 3.0).powf(1.5);
    let h = |x: f64| scale * x.signum() * x.abs().powf(1.5);
    let mut x = x0;
    let mut t = 0.0;
    loop {
        x -= dt;
        t += dt;
        if h(x) <= 0.0 {
            return t;
        }
    }
}

/// Companion case with a Lipschitz bound: integrate `h' = -h` from
/// `h(x0)` over the horizon and return the minimum value reached. Stays
/// positive for every horizon.
pub fn lipschitz_alpha_min_h(x0: f64, dt: f64, horizon: f64) -> f64 {
    assert!(x0 > 0.0 && dt > 0.0);
    let scale = (2.0f64 / 3.0).powf(1.5);
    let mut h = scale * x0.powf(1.5);
    let mut min_h = h;
    let steps = (horizon / dt).ceil() as usize;
    for _ in 0..steps {
        h += dt * (-h);
        min_h = min_h.min(h);
    }
    min_h
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn nominal() -> SystemParams {
        SystemParams::new(0.1, 0.1, 1.0).unwrap()
    }

    fn exp1_circle() -> BarrierSpec {
        BarrierSpec::circle(0.0, 0.0, 1.5).unwrap()
    }

    #[test]
    fn h_value_examples() {
        let b = exp1_circle();
        // 4 - 1.5^2
        assert_relative_eq!(b.value(&RobotState::new(2.0, 0.0, 0.3), 0.0), 1.75);

        let e = BarrierSpec::ellipse(-1.0, -1.0, 1.0, 4.0).unwrap();
        assert_relative_eq!(e.value(&RobotState::new(-1.0, -1.0, 0.0), 0.0), -1.0);

        let m = BarrierSpec::moving_circle(-2.0, 0.0, 0.6, 0.0, 0.5).unwrap();
        assert_relative_eq!(m.value(&RobotState::new(-2.5, -2.5, 0.0), 0.0), 6.25);
        // after one second the center has moved 0.6 to the right
        let c = m.center_at(1.0);
        assert_relative_eq!(c[0], -1.4);
        assert_relative_eq!(c[1], 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(BarrierSpec::circle(0.0, 0.0, 0.0).is_err());
        assert!(BarrierSpec::ellipse(0.0, 0.0, 1.0, -2.0).is_err());
        assert!(BarrierSpec::moving_circle(0.0, 0.0, 1.0, 0.0, -0.5).is_err());
    }

    #[test]
    fn lie_bundle_static_circle_closed_forms() {
        let b = exp1_circle();
        let p = nominal();

        // heading radially outward: first derivative positive, no control
        // authority
        let s = RobotState::new(2.0, 0.0, 0.0);
        let bundle = b.lie_bundle(&s, 0.0, &p);
        assert_relative_eq!(bundle.hdot, 0.4, epsilon = 1e-12);
        assert_relative_eq!(bundle.hddot_drift, 0.02, epsilon = 1e-12);
        assert_relative_eq!(bundle.input_coeff, 0.0, epsilon = 1e-12);

        // heading tangentially: full control authority
        let s = RobotState::new(0.0, 2.0, 0.0);
        let bundle = b.lie_bundle(&s, 0.0, &p);
        assert_relative_eq!(bundle.input_coeff, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn lie_bundle_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let specs = [
            exp1_circle(),
            BarrierSpec::ellipse(-1.0, -1.0, 1.0, 4.0).unwrap(),
            BarrierSpec::moving_circle(-2.0, 0.0, 0.6, 0.0, 0.5).unwrap(),
        ];
        let delta = 1e-4;
        for _ in 0..100 {
            let spec = &specs[rng.gen_range(0..specs.len())];
            let p = SystemParams::new(
                rng.gen_range(0.05..0.15),
                rng.gen_range(0.08..0.15),
                rng.gen_range(0.5..1.5),
            )
            .unwrap();
            let s = RobotState::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-PI..PI),
            );
            let t = rng.gen_range(0.0..5.0);
            let omega = rng.gen_range(-3.0..3.0);

            let bundle = spec.lie_bundle(&s, t, &p);
            let hdot_fd = fd_oracle::hdot_fd(spec, &s, t, &p, omega, delta);
            assert_relative_eq!(bundle.hdot, hdot_fd, max_relative = 1e-5, epsilon = 1e-7);

            let (drift_fd, coeff_fd) = fd_oracle::second_order_fd(spec, &s, t, &p, 1.0, delta);
            assert_relative_eq!(
                bundle.hddot_drift,
                drift_fd,
                max_relative = 1e-5,
                epsilon = 1e-7
            );
            assert_relative_eq!(
                bundle.input_coeff,
                coeff_fd,
                max_relative = 1e-5,
                epsilon = 1e-7
            );
        }
    }

    #[test]
    fn first_derivative_ignores_control() {
        let b = exp1_circle();
        let p = nominal();
        let s = RobotState::new(1.1, -2.0, 0.9);
        let base = b.first_derivative_with_control(&s, 0.0, &p, 0.0);
        for omega in [-1.0, 1.0] {
            let v = b.first_derivative_with_control(&s, 0.0, &p, omega);
            assert!((v - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn eta_uses_nominal_derivatives() {
        let b = exp1_circle();
        let eta = b.eta(&RobotState::new(2.0, 0.0, 0.0), 0.0, &nominal());
        assert_relative_eq!(eta[0], 1.75);
        assert_relative_eq!(eta[1], 0.4, epsilon = 1e-12);

        // on the boundary with a radially outward heading: (0, 2 r u |pos|)
        let on_boundary = b.eta(&RobotState::new(1.5, 0.0, 0.0), 0.0, &nominal());
        assert!(on_boundary[0].abs() < 1e-12);
        assert_relative_eq!(on_boundary[1], 2.0 * 0.1 * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn moving_barrier_hdot_includes_center_motion() {
        let m = BarrierSpec::moving_circle(-2.0, 0.0, 0.6, 0.0, 0.5).unwrap();
        let p = nominal();
        // Heading perpendicular to the offset, so the robot's own motion
        // contributes nothing and hdot is entirely the dh/dt term.
        let s = RobotState::new(0.0, 0.0, PI / 2.0);
        let bundle = m.lie_bundle(&s, 0.0, &p);
        assert_relative_eq!(bundle.hdot, 2.0 * 2.0 * (-0.6), epsilon = 1e-12);

        // frozen-state time difference oracle
        let dt = 1e-6;
        let fd = (m.value(&s, dt) - m.value(&s, -dt)) / (2.0 * dt);
        assert_relative_eq!(bundle.hdot, fd, epsilon = 1e-6);
    }

    #[test]
    fn degree_check_passes_off_radial_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = exp1_circle();
        let samples: Vec<(RobotState, f64)> = (0..1000)
            .map(|_| {
                (
                    RobotState::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-PI..PI),
                    ),
                    0.0,
                )
            })
            .collect();
        let report = relative_degree_check(&b, &samples, &nominal(), 1e-3).unwrap();
        assert!(report.max_lg_h <= 1e-9);
        assert!(report.min_lg_lf_h > 0.0);
        assert!(report.samples_used > 900);
    }

    #[test]
    fn degree_check_flags_exact_radial_heading() {
        let b = exp1_circle();
        // heading exactly radial: control coefficient is exactly zero
        let samples = vec![(RobotState::new(2.0, 0.0, 0.0), 0.0)];
        let err = relative_degree_check(&b, &samples, &nominal(), 0.0).unwrap_err();
        match err {
            BarrierError::DegreeViolation { min_lg_lf_h, .. } => {
                assert_eq!(min_lg_lf_h, 0.0)
            }
            other => panic!("unexpected error {other:?}"),
        }
        // with the band the sample is excluded and the set is empty
        assert!(matches!(
            relative_degree_check(&b, &samples, &nominal(), 1e-3),
            Err(BarrierError::EmptySampleSet)
        ));
    }

    #[test]
    fn degree_check_ellipse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = BarrierSpec::ellipse(-1.0, -1.0, 1.0, 4.0).unwrap();
        let samples: Vec<(RobotState, f64)> = (0..1000)
            .map(|_| {
                (
                    RobotState::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-PI..PI),
                    ),
                    0.0,
                )
            })
            .collect();
        relative_degree_check(&e, &samples, &nominal(), 1e-3).unwrap();
    }

    #[test]
    fn pole_placement_examples() {
        let k = pole_placement(&[-1.0, -1.0]).unwrap();
        assert_relative_eq!(k.coefficients()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(k.coefficients()[1], 2.0, epsilon = 1e-12);

        let r = 2.0f64.sqrt();
        let k = pole_placement(&[-3.0 + 2.0 * r, -3.0 - 2.0 * r]).unwrap();
        assert_relative_eq!(k.coefficients()[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(k.coefficients()[1], 6.0, epsilon = 1e-9);

        let k = pole_placement(&[-2.0, -5.0]).unwrap();
        assert_relative_eq!(k.coefficients()[0], 10.0, epsilon = 1e-12);
        assert_relative_eq!(k.coefficients()[1], 7.0, epsilon = 1e-12);
    }

    #[test]
    fn pole_placement_rejects_unstable() {
        assert!(matches!(
            pole_placement(&[-1.0, 0.0]),
            Err(BarrierError::NonHurwitz(_))
        ));
        assert!(pole_placement(&[-1.0, 0.5]).is_err());
    }

    #[test]
    fn linear_chain_reduces_to_gain_form() {
        let chain = HocbfChain::uniform(ClassK::Linear, &[1.0, 1.0]).unwrap();
        let gain = pole_placement(&[-1.0, -1.0]).unwrap();
        let b = exp1_circle();
        let p = nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let s = RobotState::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-PI..PI),
            );
            let eval = b_chain(&chain, &b, &s, 0.0, &p).unwrap();
            let bundle = b.lie_bundle(&s, 0.0, &p);
            // chain condition: drift + a*w >= -relax
            // gain condition: hddot_drift + a*w >= -K.eta
            let chain_rhs = -eval.relax - (eval.drift - bundle.hddot_drift);
            let gain_rhs = -gain.dot(&bundle.eta());
            assert_relative_eq!(chain_rhs, gain_rhs, epsilon = 1e-10);
            assert_eq!(eval.input_coeff, bundle.input_coeff);
        }
    }

    #[test]
    fn chain_b0_matches_h_and_cubic_alpha_at_boundary() {
        let b = exp1_circle();
        let p = nominal();
        let s = RobotState::new(2.0, 0.0, 0.0);
        let chain = HocbfChain::uniform(ClassK::Linear, &[1.0, 1.0]).unwrap();
        let eval = b_chain(&chain, &b, &s, 0.0, &p).unwrap();
        assert_relative_eq!(eval.b_values[0], 1.75);

        // cubic class-K vanishes at zero: on the boundary b_1 = hdot
        let cubic = HocbfChain::uniform(ClassK::power(3).unwrap(), &[1.0, 1.0]).unwrap();
        let on_boundary = RobotState::new(1.5, 0.0, 1.0);
        let eval = b_chain(&cubic, &b, &on_boundary, 0.0, &p).unwrap();
        let bundle = b.lie_bundle(&on_boundary, 0.0, &p);
        assert!(bundle.h.abs() < 1e-12);
        assert_relative_eq!(eval.b_values[1], bundle.hdot, epsilon = 1e-12);
    }

    #[test]
    fn chain_rejects_bad_inputs() {
        assert!(HocbfChain::uniform(ClassK::Linear, &[1.0, 0.0]).is_err());
        assert!(ClassK::power(0).is_err());
        let chain = HocbfChain::uniform(ClassK::Linear, &[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            b_chain(
                &chain,
                &exp1_circle(),
                &RobotState::new(2.0, 0.0, 0.0),
                0.0,
                &nominal()
            ),
            Err(BarrierError::ChainOrder(3))
        ));
    }

    #[test]
    fn select_cj_examples() {
        let b = exp1_circle();
        let p = nominal();
        let alphas = [ClassK::Linear, ClassK::Linear];

        // hdot > 0 at a radially outward heading: margin alone suffices
        let s = RobotState::new(2.0, 0.0, 0.0);
        let c = select_cj(&alphas, &[0.01, 0.01], &b, &s, 0.0, &p).unwrap();
        assert_relative_eq!(c[0], 0.01);

        // hdot = -0.4, h = 1.75 at the inward heading: the ratio dominates
        let s = RobotState::new(2.0, 0.0, PI);
        let c = select_cj(&alphas, &[0.01, 0.01], &b, &s, 0.0, &p).unwrap();
        assert_relative_eq!(c[0], 0.4 / 1.75 + 0.01, epsilon = 1e-12);

        // outside the interior: rejected
        let s = RobotState::new(0.5, 0.0, 0.0);
        assert!(matches!(
            select_cj(&alphas, &[0.01, 0.01], &b, &s, 0.0, &p),
            Err(BarrierError::NotInInterior(_))
        ));
    }

    #[test]
    fn select_cj_yields_positive_chain_values() {
        let b = exp1_circle();
        let p = nominal();
        let alphas = [ClassK::Linear, ClassK::Linear];
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut checked = 0;
        while checked < 100 {
            let s = RobotState::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-PI..PI),
            );
            if b.value(&s, 0.0) <= 0.0 {
                continue;
            }
            checked += 1;
            let c = select_cj(&alphas, &[0.01, 0.01], &b, &s, 0.0, &p).unwrap();
            let chain = HocbfChain::uniform(ClassK::Linear, &c).unwrap();
            let eval = b_chain(&chain, &b, &s, 0.0, &p).unwrap();
            for (j, bj) in eval.b_values.iter().enumerate() {
                assert!(*bj > 0.0, "b_{j} = {bj} at {s:?} with c = {c:?}");
            }
        }
    }

    #[test]
    fn nonlipschitz_alpha_escapes_at_x0() {
        assert!((nonlipschitz_alpha_escape_time(1.0, 1e-4) - 1.0).abs() < 1e-2);
        assert!((nonlipschitz_alpha_escape_time(0.25, 1e-4) - 0.25).abs() < 1e-2);
    }

    #[test]
    fn lipschitz_alpha_stays_positive() {
        // ten times the horizon at which the non-Lipschitz case escapes
        assert!(lipschitz_alpha_min_h(1.0, 1e-4, 10.0) > 0.0);
        assert!(lipschitz_alpha_min_h(0.25, 1e-4, 2.5) > 0.0);
    }
}
