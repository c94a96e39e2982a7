//! TOML run configuration.
//!
//! ```toml
//! [experiment]
//! dim = 256                 # or a list, e.g. [64, 128, 256]
//! budget = 1_000_000        # or a list; exclusive with `iterations`
//! replications = 10
//! seed = 7
//! output = "table3.csv"
//!
//! [problem]
//! sigma_sq = 400.0          # skip calibration
//!
//! [[algorithm]]
//! name = "si-sgf-sc"
//! batch_size = 2000
//! ```
//!
//! With no `[[algorithm]]` entries all three methods run with their default
//! schedules.

use std::fmt;
use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sisgf_core::bench::{
    AlgorithmKind, AlgorithmSpec, Effort, ExperimentPlan, QuadraticConfig, StartPoint, Sweep,
};
use sisgf_core::sisgf::{AosSampling, ScheduleOptions};
use sisgf_core::Variant;
use toml::Spanned;

/// Validation failure, located by line when the offending key is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    fn is_many(&self) -> bool {
        matches!(self, OneOrMany::Many(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKey {
    Dim,
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Row key of the table; inferred when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepKey>,
    pub dim: Spanned<OneOrMany<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Spanned<OneOrMany<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Spanned<usize>>,
    pub replications: Spanned<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub block_rho: f64,
    pub block_size: usize,
    pub n_nonzeros: usize,
    pub value_min: f64,
    pub value_max: f64,
    pub noise_std: f64,
    pub radius_margin: f64,
    pub calibration_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        let q = QuadraticConfig::default();
        Self {
            block_rho: q.block_rho,
            block_size: q.block_size,
            n_nonzeros: q.n_nonzeros,
            value_min: q.value_range.0,
            value_max: q.value_range.1,
            noise_std: q.noise_std,
            radius_margin: q.radius_margin,
            calibration_samples: q.calibration_samples,
            sigma_sq: q.sigma_sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    /// `si-sgf`, `si-sgf-sc` or `sgf`.
    pub name: Spanned<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Constant of the convex mini-batch rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_constant: Option<f64>,
    /// Draw a fresh sample for the in-sample cost instead of reusing the
    /// estimator's batch.
    #[serde(default, skip_serializing_if = "is_false")]
    pub aos_fresh: bool,
    /// Sparse initial point; the zero vector when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x1_index: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x1_value: Vec<f64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default, rename = "algorithm", skip_serializing_if = "Vec::is_empty")]
    pub algorithms: Vec<AlgorithmSection>,
}

/// Everything `run` needs once the config has been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedRun {
    pub plan: ExperimentPlan,
    pub key_label: &'static str,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(text, s.start)),
            field: "config".into(),
            message: e.message().trim().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check the invariants and build the experiment plan. `text` is the
    /// source the config was parsed from; it is only used to report lines.
    pub fn validate(&self, text: &str) -> Result<ValidatedRun, ConfigError> {
        let err = |span: Option<Range<usize>>, field: &str, message: String| ConfigError {
            line: span.map(|s| line_of(text, s.start)),
            field: field.into(),
            message,
        };
        let ex = &self.experiment;

        if *ex.replications.get_ref() == 0 {
            return Err(err(
                Some(ex.replications.span()),
                "experiment.replications",
                "must be at least 1".into(),
            ));
        }
        let dims = ex.dim.get_ref().to_vec();
        if dims.is_empty() || dims.contains(&0) {
            return Err(err(
                Some(ex.dim.span()),
                "experiment.dim",
                "needs one or more positive dimensions".into(),
            ));
        }

        let (sweep, key_label) = match (&ex.budget, &ex.iterations) {
            (Some(b), Some(k)) => {
                return Err(err(
                    Some(b.span().start.min(k.span().start)..b.span().end),
                    "experiment",
                    "set exactly one of budget and iterations, not both".into(),
                ))
            }
            (None, None) => {
                return Err(err(None, "experiment", "set exactly one of budget and iterations".into()))
            }
            (None, Some(k)) => {
                if *k.get_ref() == 0 {
                    return Err(err(Some(k.span()), "experiment.iterations", "must be at least 1".into()));
                }
                if ex.sweep == Some(SweepKey::Budget) {
                    return Err(err(None, "experiment.sweep", "a budget sweep needs budget".into()));
                }
                (
                    Sweep::Dimensions {
                        dims: dims.clone(),
                        effort: Effort::Iterations(*k.get_ref()),
                    },
                    "d",
                )
            }
            (Some(b), None) => {
                let budgets = b.get_ref().to_vec();
                if budgets.is_empty() || budgets.contains(&0) {
                    return Err(err(Some(b.span()), "experiment.budget", "needs one or more positive budgets".into()));
                }
                if b.get_ref().is_many() && ex.dim.get_ref().is_many() {
                    return Err(err(
                        Some(b.span()),
                        "experiment.budget",
                        "dim and budget cannot both be lists".into(),
                    ));
                }
                let by_dim = match ex.sweep {
                    Some(SweepKey::Dim) => true,
                    Some(SweepKey::Budget) => false,
                    None => ex.dim.get_ref().is_many(),
                };
                if by_dim {
                    if budgets.len() > 1 {
                        return Err(err(Some(b.span()), "experiment.budget", "a dim sweep takes one budget".into()));
                    }
                    (
                        Sweep::Dimensions {
                            dims: dims.clone(),
                            effort: Effort::Budget(budgets[0]),
                        },
                        "d",
                    )
                } else {
                    if dims.len() > 1 {
                        return Err(err(Some(ex.dim.span()), "experiment.dim", "a budget sweep takes one dim".into()));
                    }
                    (Sweep::Budgets { dim: dims[0], budgets }, "budget")
                }
            }
        };

        let p = &self.problem;
        let problem = QuadraticConfig {
            dim: dims[0],
            block_rho: p.block_rho,
            block_size: p.block_size,
            n_nonzeros: p.n_nonzeros,
            value_range: (p.value_min, p.value_max),
            noise_std: p.noise_std,
            radius_margin: p.radius_margin,
            calibration_samples: p.calibration_samples,
            sigma_sq: p.sigma_sq,
            seed: 0,
        };
        for &d in &dims {
            QuadraticConfig { dim: d, ..problem.clone() }
                .validate()
                .map_err(|e| err(None, "problem", e.to_string()))?;
        }
        if p.calibration_samples == 0 && p.sigma_sq.is_none() {
            return Err(err(
                None,
                "problem.calibration_samples",
                "must be positive unless sigma_sq is given".into(),
            ));
        }

        let algorithms = if self.algorithms.is_empty() {
            vec![
                AlgorithmSpec::new(AlgorithmKind::SiSgf(Variant::Convex)),
                AlgorithmSpec::new(AlgorithmKind::SiSgf(Variant::StronglyConvex)),
                AlgorithmSpec::new(AlgorithmKind::Sgf),
            ]
        } else {
            self.algorithms
                .iter()
                .enumerate()
                .map(|(i, a)| a.to_spec(i, text))
                .collect::<Result<_, _>>()?
        };

        Ok(ValidatedRun {
            plan: ExperimentPlan {
                sweep,
                algorithms,
                replications: *ex.replications.get_ref(),
                seed: ex.seed,
                problem,
            },
            key_label,
            output: ex.output.clone(),
        })
    }
}

impl AlgorithmSection {
    fn to_spec(&self, i: usize, text: &str) -> Result<AlgorithmSpec, ConfigError> {
        let line = Some(line_of(text, self.name.span().start));
        let err = |field: &str, message: String| ConfigError {
            line,
            field: format!("algorithm[{i}].{field}"),
            message,
        };
        let kind = match self.name.get_ref().to_ascii_lowercase().as_str() {
            "si-sgf" => AlgorithmKind::SiSgf(Variant::Convex),
            "si-sgf-sc" => AlgorithmKind::SiSgf(Variant::StronglyConvex),
            "sgf" => AlgorithmKind::Sgf,
            other => {
                return Err(err(
                    "name",
                    format!("unknown algorithm {other:?}; expected si-sgf, si-sgf-sc or sgf"),
                ))
            }
        };
        let sisgf_only = [
            ("batch_size", self.batch_size.is_some()),
            ("delta", self.delta.is_some()),
            ("batch_constant", self.batch_constant.is_some()),
            ("aos_fresh", self.aos_fresh),
        ];
        if kind == AlgorithmKind::Sgf {
            if let Some((field, _)) = sisgf_only.iter().find(|(_, set)| *set) {
                return Err(err(field, "only applies to si-sgf and si-sgf-sc".into()));
            }
        }
        if self.batch_size == Some(0) {
            return Err(err("batch_size", "must be at least 1".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(err("delta", format!("must be positive, got {d}")));
            }
        }
        let mut schedule = ScheduleOptions::default();
        if let Some(c) = self.batch_constant {
            if !(c > 0.0 && c.is_finite()) {
                return Err(err("batch_constant", format!("must be positive, got {c}")));
            }
            schedule.convex_batch_constant = c;
        }
        if self.x1_index.len() != self.x1_value.len() {
            return Err(err(
                "x1_value",
                format!(
                    "has {} entries but x1_index has {}",
                    self.x1_value.len(),
                    self.x1_index.len()
                ),
            ));
        }
        let start = if self.x1_index.is_empty() {
            StartPoint::Zero
        } else {
            StartPoint::Sparse(self.x1_index.iter().copied().zip(self.x1_value.iter().copied()).collect())
        };
        Ok(AlgorithmSpec {
            kind,
            batch_size: self.batch_size,
            delta: self.delta,
            aos: if self.aos_fresh { AosSampling::Fresh } else { AosSampling::Reuse },
            start,
            schedule,
        })
    }
}

/// 1-based line containing byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}
