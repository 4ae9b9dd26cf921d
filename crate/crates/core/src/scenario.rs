//! Scenario files: a flat key/value text format with sectioned obstacle
//! blocks.
//!
//! ```text
//! # top-level keys
//! workspace = -3 3 -3 3
//! dt = 0.1
//! max_steps = 2500
//! omega_box = -10 10          # optional, default -10 10
//! seed = 1                    # optional, default 1
//!
//! [goal]
//! center = 2.2 2.2
//! half_width = 0.3
//!
//! [nominal_model]
//! r = 0.1
//! L = 0.1
//! u = 1.0
//!
//! [true_model]
//! r = 0.1
//! L = 0.1
//! u = 0.7
//!
//! [gain]                      # exponential form: K = (k_0, k_1)
//! k = 1 6
//!
//! # or, mutuallyexclusive with [gain]:
//! # [chain]
//! # alpha = linear            # or: alpha = power 3
//! # c = 1 1
//!
//! [control]                   # optional, defaults shown
//! k_theta = 2.0
//! omega_max = 10.0
//!
//! [obstacle]                  # one block per barrier, repeatable
//! kind = circle               # circle | ellipse | moving_circle
//! center = 0 0
//! radius = 1.5
//! # ellipse:       weights = 1 4
//! # moving_circle: velocity = 0.6 0
//!
//! [train]
//! trajectories = 40
//! steps = 250
//! batch = 64                  # optional
//! buffer = 10000              # optional
//! learning_rate = 1e-3        # optional
//! seed = 7                    # optional
//! label_window = 1            # optional
//! region = -3 3 -3 3          # optional, default workspace
//!
//! [eval]
//! region = -2.5 -1.5 -2.5 -1.5
//! ```
//!
//! Unknown sections or keys are rejected with a line diagnostic; every
//! structural invariant is checked after parsing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::barrier::{BarrierSpec, ClassK, EcbfGain, HocbfChain};
use crate::control::GoalSpec;
use crate::dynamics::SystemParams;
use crate::learner::TrainConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The filter's class of safety condition.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterLaw {
    /// `h'' >= -K . (h, h')`
    Ecbf(EcbfGain),
    /// Recursive chain with class-K damping at every stage.
    Hocbf(HocbfChain),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGains {
    pub k_theta: f64,
    pub omega_max: f64,
}

/// A fully validated experiment declaration.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// `(x_min, x_max, y_min, y_max)`
    pub workspace: [f64; 4],
    pub dt: f64,
    pub max_steps: usize,
    /// Control box handed to the filter.
    pub omega_box: [f64; 2],
    /// Base seed for evaluation sampling.
    pub seed: u64,
    pub goal: GoalSpec,
    pub nominal_params: SystemParams,
    pub true_params: SystemParams,
    pub filter_law: FilterLaw,
    pub control: ControlGains,
    pub barriers: Vec<BarrierSpec>,
    pub train: TrainConfig,
    /// Region training rollouts start from.
    pub train_region: [f64; 4],
    /// Region evaluation rollouts start from.
    pub eval_region: [f64; 4],
}

impl ScenarioConfig {
    pub fn in_workspace(&self, x: f64, y: f64) -> bool {
        x >= self.workspace[0]
            && x <= self.workspace[1]
            && y >= self.workspace[2]
            && y <= self.workspace[3]
    }
}

/// Parse and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let text = fs::read_to_string(path)?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let raw = RawConfig::parse(text)?;
    raw.validate()
}

// ──────────────────────── raw parsing ────────────────────────

struct Entry {
    line: usize,
    values: Vec<String>,
}

#[derive(Default)]
struct Section {
    line: usize,
    entries: HashMap<String, Entry>,
}

struct RawConfig {
    top: Section,
    sections: HashMap<String, Section>,
    obstacles: Vec<Section>,
}

const KNOWN_SECTIONS: &[&str] = &[
    "goal",
    "nominal_model",
    "true_model",
    "gain",
    "chain",
    "control",
    "obstacle",
    "train",
    "eval",
];

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("", &["workspace", "dt", "max_steps", "omega_box", "seed"]),
    ("goal", &["center", "half_width"]),
    ("nominal_model", &["r", "L", "u"]),
    ("true_model", &["r", "L", "u"]),
    ("gain", &["k"]),
    ("chain", &["alpha", "c"]),
    ("control", &["k_theta", "omega_max"]),
    ("obstacle", &["kind", "center", "radius", "weights", "velocity"]),
    (
        "train",
        &[
            "trajectories",
            "steps",
            "batch",
            "buffer",
            "learning_rate",
            "seed",
            "label_window",
            "region",
        ],
    ),
    ("eval", &["region"]),
];

fn known_keys(section: &str) -> &'static [&'static str] {
    KNOWN_KEYS
        .iter()
        .find(|(name, _)| *name == section)
        .map(|(_, keys)| *keys)
        .unwrap_or(&[])
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut raw = RawConfig {
            top: Section::default(),
            sections: HashMap::new(),
            obstacles: Vec::new(),
        };
        let mut current: Option<String> = None;

        for (idx, line_raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match line_raw.find('#') {
                Some(pos) => &line_raw[..pos],
                None => line_raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }

            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ScenarioError::Parse {
                        line: line_no,
                        message: "unterminated section header".into(),
                    })?
                    .trim()
                    .to_string();
                if !KNOWN_SECTIONS.contains(&name.as_str()) {
                    return Err(ScenarioError::Parse {
                        line: line_no,
                        message: format!("unknown section `[{name}]`"),
                    });
                }
                if name == "obstacle" {
                    raw.obstacles.push(Section {
                        line: line_no,
                        ..Default::default()
                    });
                } else if raw.sections.contains_key(&name) {
                    return Err(ScenarioError::Parse {
                        line: line_no,
                        message: format!("duplicate section `[{name}]`"),
                    });
                } else {
                    raw.sections.insert(
                        name.clone(),
                        Section {
                            line: line_no,
                            ..Default::default()
                        },
                    );
                }
                current = Some(name);
                continue;
            }

            let (key, value) = line.split_once('=').ok_or_else(|| ScenarioError::Parse {
                line: line_no,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            let values: Vec<String> = value.split_whitespace().map(str::to_string).collect();
            if values.is_empty() {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    message: format!("key `{key}` has no value"),
                });
            }

            let section_name = current.as_deref().unwrap_or("");
            if !known_keys(section_name).contains(&key.as_str()) {
                let ctx = if section_name.is_empty() {
                    "top level".to_string()
                } else {
                    format!("section `[{section_name}]`")
                };
                return Err(ScenarioError::Parse {
                    line: line_no,
                    message: format!("unknown key `{key}` in {ctx}"),
                });
            }

            let section = match current.as_deref() {
                None => &mut raw.top,
                Some("obstacle") => raw.obstacles.last_mut().unwrap(),
                Some(name) => raw.sections.get_mut(name).unwrap(),
            };
            if section
                .entries
                .insert(key.clone(), Entry { line: line_no, values })
                .is_some()
            {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(raw)
    }

    fn validate(self) -> Result<ScenarioConfig, ScenarioError> {
        let invalid = |msg: String| ScenarioError::Validation(msg);

        let workspace = self.top.floats::<4>("workspace")?;
        if workspace[0] >= workspace[1] || workspace[2] >= workspace[3] {
            return Err(invalid("workspace bounds must be ordered".into()));
        }
        let dt = self.top.float("dt")?;
        if !(dt > 0.0) {
            return Err(invalid("dt must be positive".into()));
        }
        let max_steps = self.top.integer("max_steps")? as usize;
        if max_steps == 0 {
            return Err(invalid("max_steps must be positive".into()));
        }
        let omega_box = match self.top.entries.contains_key("omega_box") {
            true => self.top.floats::<2>("omega_box")?,
            false => [-10.0, 10.0],
        };
        if omega_box[0] >= omega_box[1] {
            return Err(invalid("omega_box must be ordered".into()));
        }
        let seed = match self.top.entries.contains_key("seed") {
            true => self.top.integer("seed")?,
            false => 1,
        };

        let goal_sec = self.section("goal")?;
        let center = goal_sec.floats::<2>("center")?;
        let half_width = goal_sec.float("half_width")?;
        if !(half_width > 0.0) {
            return Err(invalid("goal half_width must be positive".into()));
        }
        let goal = GoalSpec::new(center[0], center[1], half_width);

        let nominal_params = self.params("nominal_model")?;
        let true_params = self.params("true_model")?;

        let filter_law = match (self.sections.get("gain"), self.sections.get("chain")) {
            (Some(gain), None) => {
                let k = gain.float_list("k")?;
                let gain = EcbfGain::from_coefficients(k)
                    .map_err(|e| invalid(format!("gain: {e}")))?;
                if gain.order() != 2 {
                    return Err(invalid("this plant requires a gain of order 2".into()));
                }
                FilterLaw::Ecbf(gain)
            }
            (None, Some(chain)) => {
                let alpha_entry = chain.strings("alpha")?;
                let alpha = match alpha_entry.as_slice() {
                    [kind] if kind == "linear" => ClassK::Linear,
                    [kind, q] if kind == "power" => {
                        let q: u32 = q.parse().map_err(|_| {
                            invalid(format!("chain: bad power exponent `{q}`"))
                        })?;
                        ClassK::power(q).map_err(|e| invalid(format!("chain: {e}")))?
                    }
                    _ => return Err(invalid("chain: alpha must be `linear` or `power <q>`".into())),
                };
                let c = chain.float_list("c")?;
                let chain = HocbfChain::uniform(alpha, &c)
                    .map_err(|e| invalid(format!("chain: {e}")))?;
                if chain.order() != 2 {
                    return Err(invalid("this plant requires a chain of order 2".into()));
                }
                FilterLaw::Hocbf(chain)
            }
            (Some(_), Some(_)) => {
                return Err(invalid("declare either [gain] or [chain], not both".into()))
            }
            (None, None) => return Err(invalid("missing [gain] or [chain] section".into())),
        };

        let control = match self.sections.get("control") {
            Some(sec) => {
                let k_theta = sec.float("k_theta")?;
                let omega_max = sec.float("omega_max")?;
                if !(k_theta > 0.0 && omega_max > 0.0) {
                    return Err(invalid("control gains must be positive".into()));
                }
                ControlGains { k_theta, omega_max }
            }
            None => ControlGains {
                k_theta: 2.0,
                omega_max: 10.0,
            },
        };

        if self.obstacles.is_empty() {
            return Err(invalid("at least one [obstacle] is required".into()));
        }
        let mut barriers = Vec::with_capacity(self.obstacles.len());
        for sec in &self.obstacles {
            barriers.push(sec.barrier()?);
        }

        let train_sec = self.section("train")?;
        let train = TrainConfig {
            trajectories: train_sec.integer("trajectories")? as usize,
            steps_per_trajectory: train_sec.integer("steps")? as usize,
            batch_size: train_sec.opt_integer("batch")?.unwrap_or(64) as usize,
            buffer_capacity: train_sec.opt_integer("buffer")?.unwrap_or(10_000) as usize,
            learning_rate: train_sec.opt_float("learning_rate")?.unwrap_or(1e-3),
            seed: train_sec.opt_integer("seed")?.unwrap_or(7),
            label_window: train_sec.opt_integer("label_window")?.unwrap_or(1) as usize,
        };
        train
            .validate()
            .map_err(|e| invalid(format!("train: {e}")))?;
        let train_region = match train_sec.entries.contains_key("region") {
            true => train_sec.floats::<4>("region")?,
            false => workspace,
        };

        let eval_region = self.section("eval")?.floats::<4>("region")?;
        for (name, region) in [("train", &train_region), ("eval", &eval_region)] {
            if region[0] >= region[1] || region[2] >= region[3] {
                return Err(invalid(format!("{name} region bounds must be ordered")));
            }
            let inside = region[0] >= workspace[0]
                && region[1] <= workspace[1]
                && region[2] >= workspace[2]
                && region[3] <= workspace[3];
            if !inside {
                return Err(invalid(format!("{name} region must lie inside the workspace")));
            }
        }

        Ok(ScenarioConfig {
            workspace,
            dt,
            max_steps,
            omega_box,
            seed,
            goal,
            nominal_params,
            true_params,
            filter_law,
            control,
            barriers,
            train,
            train_region,
            eval_region,
        })
    }

    fn section(&self, name: &str) -> Result<&Section, ScenarioError> {
        self.sections
            .get(name)
            .ok_or_else(|| ScenarioError::Validation(format!("missing [{name}] section")))
    }

    fn params(&self, name: &str) -> Result<SystemParams, ScenarioError> {
        let sec = self.section(name)?;
        SystemParams::new(sec.float("r")?, sec.float("L")?, sec.float("u")?)
            .map_err(|e| ScenarioError::Validation(format!("{name}: {e}")))
    }
}

impl Section {
    fn entry(&self, key: &str) -> Result<&Entry, ScenarioError> {
        self.entries.get(key).ok_or_else(|| ScenarioError::Parse {
            line: self.line,
            message: format!("missing key `{key}`"),
        })
    }

    fn strings(&self, key: &str) -> Result<Vec<String>, ScenarioError> {
        Ok(self.entry(key)?.values.clone())
    }

    fn float(&self, key: &str) -> Result<f64, ScenarioError> {
        let e = self.entry(key)?;
        if e.values.len() != 1 {
            return Err(ScenarioError::Parse {
                line: e.line,
                message: format!("key `{key}` expects a single value"),
            });
        }
        e.values[0].parse().map_err(|_| ScenarioError::Parse {
            line: e.line,
            message: format!("key `{key}`: `{}` is not a number", e.values[0]),
        })
    }

    fn opt_float(&self, key: &str) -> Result<Option<f64>, ScenarioError> {
        if self.entries.contains_key(key) {
            Ok(Some(self.float(key)?))
        } else {
            Ok(None)
        }
    }

    fn integer(&self, key: &str) -> Result<u64, ScenarioError> {
        let e = self.entry(key)?;
        if e.values.len() != 1 {
            return Err(ScenarioError::Parse {
                line: e.line,
                message: format!("key `{key}` expects a single value"),
            });
        }
        e.values[0].parse().map_err(|_| ScenarioError::Parse {
            line: e.line,
            message: format!("key `{key}`: `{}` is not an integer", e.values[0]),
        })
    }

    fn opt_integer(&self, key: &str) -> Result<Option<u64>, ScenarioError> {
        if self.entries.contains_key(key) {
            Ok(Some(self.integer(key)?))
        } else {
            Ok(None)
        }
    }

    fn float_list(&self, key: &str) -> Result<Vec<f64>, ScenarioError> {
        let e = self.entry(key)?;
        e.values
            .iter()
            .map(|v| {
                v.parse().map_err(|_| ScenarioError::Parse {
                    line: e.line,
                    message: format!("key `{key}`: `{v}` is not a number"),
                })
            })
            .collect()
    }

    fn floats<const N: usize>(&self, key: &str) -> Result<[f64; N], ScenarioError> {
        let list = self.float_list(key)?;
        let line = self.entry(key)?.line;
        list.try_into().map_err(|_| ScenarioError::Parse {
            line,
            message: format!("key `{key}` expects {N} numbers"),
        })
    }

    fn barrier(&self) -> Result<BarrierSpec, ScenarioError> {
        let kind = self.strings("kind")?;
        let center = self.floats::<2>("center")?;
        let fail = |e: crate::barrier::BarrierError| {
            ScenarioError::Validation(format!("obstacle at line {}: {e}", self.line))
        };
        match kind.first().map(String::as_str) {
            Some("circle") => {
                BarrierSpec::circle(center[0], center[1], self.float("radius")?).map_err(fail)
            }
            Some("ellipse") => {
                let w = self.floats::<2>("weights")?;
                BarrierSpec::ellipse(center[0], center[1], w[0], w[1]).map_err(fail)
            }
            Some("moving_circle") => {
                let v = self.floats::<2>("velocity")?;
                BarrierSpec::moving_circle(center[0], center[1], v[0], v[1], self.float("radius")?)
                    .map_err(fail)
            }
            other => Err(ScenarioError::Parse {
                line: self.line,
                message: format!("unknown obstacle kind {other:?}"),
            }),
        }
    }
}
