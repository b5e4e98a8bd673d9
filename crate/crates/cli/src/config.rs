//! Scenario configuration files.
//!
//! A scenario is a TOML document with a top-level `scheme` key and one
//! section per scheme:
//!
//! ```toml
//! scheme = "hedge"
//! seed = 7
//!
//! [gbm]
//! p0 = 20.0
//! mu_g = 0.1
//! sigma_g = 0.3
//!
//! [hedge]
//! demand = 25.0
//! block_power = 1.0
//! maturity = 5.0
//! n_steps = 300
//! ```
//!
//! Powers are in kW and times in hours. The reserve tolerance `epsilon` is in
//! per-unit squared on the base power `base_power` (default 25 kW) and is
//! converted to kW^2 here, at the boundary.

use std::fmt;
use std::path::PathBuf;

use microgrid_risk::alloc::ReguEnsemble;
use microgrid_risk::gbm::{GbmParams, MeanConvention};
use microgrid_risk::hedge::HedgeProblem;
use microgrid_risk::reserve::{BlockRounding, ReserveProblem};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_BASE_POWER: f64 = 25.0;

macro_rules! checked_float {
    ($name:ident, $ok:expr, $what:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
        #[serde(try_from = "f64", into = "f64")]
        pub struct $name(pub f64);

        impl TryFrom<f64> for $name {
            type Error = String;
            fn try_from(v: f64) -> std::result::Result<Self, String> {
                let ok: fn(f64) -> bool = $ok;
                if ok(v) {
                    Ok(Self(v))
                } else {
                    Err(format!(concat!("expected ", $what, ", got {}"), v))
                }
            }
        }

        impl From<$name> for f64 {
            fn from(v: $name) -> f64 {
                v.0
            }
        }
    };
}

checked_float!(Positive, |v| v.is_finite() && v > 0.0, "a positive number");
checked_float!(NonNegative, |v| v.is_finite() && v >= 0.0, "a non-negative number");
checked_float!(Finite, |v| v.is_finite(), "a finite number");

/// Integer count of at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Count(pub usize);

impl TryFrom<i64> for Count {
    type Error = String;
    fn try_from(v: i64) -> std::result::Result<Self, String> {
        if v >= 1 {
            Ok(Self(v as usize))
        } else {
            Err(format!("expected an integer of at least 1, got {v}"))
        }
    }
}

impl From<Count> for i64 {
    fn from(v: Count) -> i64 {
        v.0 as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Allocate,
    Reserve,
    Hedge,
    MontecarloHedge,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Allocate => "allocate",
            Scheme::Reserve => "reserve",
            Scheme::Hedge => "hedge",
            Scheme::MontecarloHedge => "montecarlo-hedge",
        }
    }

    fn section(self) -> &'static str {
        match self {
            Scheme::Allocate => "allocate",
            Scheme::Reserve => "reserve",
            Scheme::Hedge | Scheme::MontecarloHedge => "hedge",
        }
    }

    fn is_stochastic(self) -> bool {
        self != Scheme::Allocate
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmSection {
    /// Initial generation (kW).
    pub p0: Positive,
    /// Drift per hour.
    pub mu_g: Finite,
    /// Volatility per square-root hour.
    pub sigma_g: NonNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocateSection {
    /// Demand D_l (kW).
    pub demand: NonNegative,
    /// Mean output of each unit (kW).
    pub means: Vec<Finite>,
    /// Variances of uncorrelated units (kW^2). Exclusive with `covariance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<Vec<Positive>>,
    /// Full covariance matrix (kW^2). Exclusive with `variances`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<Finite>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReserveSection {
    /// Sustained demand D_e (kW).
    pub demand: NonNegative,
    /// Power per battery block (kW).
    pub block_power: Positive,
    /// Planning horizon (h).
    pub horizon: Positive,
    /// Steps of the simulated generation path.
    pub n_steps: Count,
    /// Mismatch tolerance in per-unit squared.
    pub epsilon: Positive,
    #[serde(default)]
    pub convention: MeanConvention,
    #[serde(default)]
    pub rounding: BlockRounding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeSection {
    /// Critical demand D_c due at maturity (kW).
    pub demand: Positive,
    /// Power per battery block (kW).
    pub block_power: Positive,
    /// Maturity T_f (h); also the simulated path length.
    pub maturity: Positive,
    /// Steps of the simulated generation path.
    pub n_steps: Count,
    /// Rebalance every this many path steps.
    #[serde(default = "one")]
    pub rebalance_every: Count,
    /// Earlier maturities hedged on the same path, for horizon comparisons.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_maturities: Vec<Positive>,
    /// Ensemble size for `montecarlo-hedge`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<Count>,
    /// Also replay a coupled ensemble at twice the step count and report
    /// the error at both rebalancing frequencies.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub convergence_check: bool,
}

fn one() -> Count {
    Count(1)
}

fn default_base_power() -> Positive {
    Positive(DEFAULT_BASE_POWER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Master seed; required for every scheme except `allocate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Per-unit base (kW).
    #[serde(default = "default_base_power")]
    pub base_power: Positive,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gbm: Option<GbmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocate: Option<AllocateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve: Option<ReserveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hedge: Option<HedgeSection>,
}

/// A validation failure tied to a dotted key such as `hedge.n_paths`.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub key: String,
    pub message: String,
}

impl Issue {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into() }
    }
}

impl ScenarioConfig {
    /// Parses and validates `src`. Errors name `origin` and the offending line.
    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(src).map_err(|e| {
            let position = e.span().map(|s| line_col(src, s.start));
            let message = e.message().trim_end();
            match position {
                Some((line, col)) => CliError::Config(format!("{origin}:{line}:{col}: {message}")),
                None => CliError::Config(format!("{origin}: {message}")),
            }
        })?;
        cfg.validate().map_err(|issue| {
            let line = locate_key(src, &issue.key);
            CliError::Config(match line {
                Some(line) => format!("{origin}:{line}: {}: {}", issue.key, issue.message),
                None => format!("{origin}: {}: {}", issue.key, issue.message),
            })
        })?;
        Ok(cfg)
    }

    /// Serialises the configuration back to TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialise configuration: {e}")))
    }

    /// Checks everything that the schema alone cannot express.
    pub fn validate(&self) -> std::result::Result<(), Issue> {
        let wanted = self.scheme.section();
        for (name, present) in [
            ("allocate", self.allocate.is_some()),
            ("reserve", self.reserve.is_some()),
            ("hedge", self.hedge.is_some()),
        ] {
            if name == wanted && !present {
                return Err(Issue::new("scheme", format!("scheme '{}' needs a [{name}] section", self.scheme)));
            }
            if name != wanted && present {
                return Err(Issue::new(name, format!("section [{name}] does not belong to scheme '{}'", self.scheme)));
            }
        }
        if self.scheme.is_stochastic() {
            match self.seed {
                None => return Err(Issue::new("seed", "a seed is required for stochastic schemes")),
                Some(s) if s > i64::MAX as u64 => {
                    return Err(Issue::new("seed", format!("seed must be below 2^63, got {s}")))
                }
                _ => {}
            }
            if self.gbm.is_none() {
                return Err(Issue::new("gbm", format!("scheme '{}' needs a [gbm] section", self.scheme)));
            }
        } else if self.gbm.is_some() {
            return Err(Issue::new("gbm", "section [gbm] does not belong to scheme 'allocate'"));
        }

        match self.scheme {
            Scheme::Allocate => {
                self.ensemble().map_err(|e| Issue::new("allocate", e.to_string()))?;
            }
            Scheme::Reserve => {
                self.reserve_problem().map_err(|e| Issue::new("reserve", e.to_string()))?;
            }
            Scheme::Hedge | Scheme::MontecarloHedge => {
                let h = self.hedge_section().map_err(|e| Issue::new("hedge", e.to_string()))?;
                self.hedge_problem().map_err(|e| Issue::new("hedge", e.to_string()))?;
                if h.rebalance_every.0 > h.n_steps.0 {
                    return Err(Issue::new("hedge.rebalance_every", "cannot exceed n_steps"));
                }
                let dt = h.maturity.0 / h.n_steps.0 as f64;
                for m in &h.extra_maturities {
                    let steps = m.0 / dt;
                    if m.0 >= h.maturity.0 || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                        return Err(Issue::new(
                            "hedge.extra_maturities",
                            format!("{} h must be a path grid point before the maturity", m.0),
                        ));
                    }
                }
                if self.scheme == Scheme::MontecarloHedge && h.n_paths.is_none() {
                    return Err(Issue::new("hedge", "montecarlo-hedge needs n_paths"));
                }
            }
        }
        Ok(())
    }

    pub fn gbm_params(&self) -> Result<GbmParams> {
        let g = self.gbm.ok_or_else(|| CliError::Config("missing [gbm] section".into()))?;
        Ok(GbmParams::new(g.p0.0, g.mu_g.0, g.sigma_g.0)?)
    }

    pub fn allocate_section(&self) -> Result<&AllocateSection> {
        self.allocate.as_ref().ok_or_else(|| CliError::Config("missing [allocate] section".into()))
    }

    pub fn reserve_section(&self) -> Result<&ReserveSection> {
        self.reserve.as_ref().ok_or_else(|| CliError::Config("missing [reserve] section".into()))
    }

    pub fn hedge_section(&self) -> Result<&HedgeSection> {
        self.hedge.as_ref().ok_or_else(|| CliError::Config("missing [hedge] section".into()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::Config("a seed is required for stochastic schemes".into()))
    }

    pub fn ensemble(&self) -> Result<ReguEnsemble> {
        let a = self.allocate_section()?;
        let means: Vec<f64> = a.means.iter().map(|m| m.0).collect();
        match (&a.variances, &a.covariance) {
            (Some(v), None) => {
                let v: Vec<f64> = v.iter().map(|x| x.0).collect();
                Ok(ReguEnsemble::uncorrelated(means, &v, a.demand.0)?)
            }
            (None, Some(c)) => {
                let c = c.iter().map(|row| row.iter().map(|x| x.0).collect()).collect();
                Ok(ReguEnsemble::new(means, c, a.demand.0)?)
            }
            _ => Err(CliError::Config("give exactly one of variances or covariance".into())),
        }
    }

    /// Reserve problem with the tolerance converted to kW^2.
    pub fn reserve_problem(&self) -> Result<ReserveProblem> {
        let r = self.reserve_section()?;
        let eps_kw2 = r.epsilon.0 * self.base_power.0 * self.base_power.0;
        Ok(ReserveProblem::new(self.gbm_params()?, r.demand.0, r.block_power.0, r.horizon.0, eps_kw2)?
            .with_convention(r.convention)
            .with_rounding(r.rounding))
    }

    pub fn hedge_problem(&self) -> Result<HedgeProblem> {
        let h = self.hedge_section()?;
        Ok(HedgeProblem::new(self.gbm_params()?, h.demand.0, h.block_power.0, h.maturity.0)?)
    }
}

/// 1-based line and column of byte `offset`.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

/// Line on which dotted `key` is defined, falling back to its table header.
fn locate_key(src: &str, key: &str) -> Option<usize> {
    let (table, leaf) = match key.rsplit_once('.') {
        Some((t, l)) => (t, l),
        None => ("", key),
    };
    let mut current = String::new();
    let mut header = None;
    for (idx, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            if current == key {
                header = Some(idx + 1);
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        if current == table && lhs.trim() == leaf {
            return Some(idx + 1);
        }
    }
    header
}
