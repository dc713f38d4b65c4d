//! Cascade configuration and its TOML form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CrvError, Result};
use crate::linear::{RelaxationChoice, LIN_ID};
use crate::oracle::AttackConfig;
use crate::sdp::{SolverConfig, SubmethodLadder};

/// One verifier a stage can call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Submethod {
    Lin,
    Sdp(usize),
}

impl fmt::Display for Submethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Submethod::Lin => f.write_str(LIN_ID),
            Submethod::Sdp(k) => write!(f, "sdp:{k}"),
        }
    }
}

impl FromStr for Submethod {
    type Err = CrvError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == LIN_ID {
            return Ok(Submethod::Lin);
        }
        s.strip_prefix("sdp:")
            .and_then(|k| k.trim().parse::<usize>().ok())
            .map(Submethod::Sdp)
            .ok_or_else(|| CrvError::Config(format!("unknown verifier `{s}` (expected `lin` or `sdp:<level>`)")))
    }
}

/// A cascade stage: a single verifier, or an SR group of ladder levels run
/// loosest to tightest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StageSpec {
    Single(Submethod),
    Sr(Vec<usize>),
}

impl StageSpec {
    pub fn submethods(&self) -> Vec<Submethod> {
        match self {
            StageSpec::Single(s) => vec![*s],
            StageSpec::Sr(levels) => levels.iter().map(|&k| Submethod::Sdp(k)).collect(),
        }
    }

    /// The tightest (last) submethod.
    pub fn tightest(&self) -> Submethod {
        *self.submethods().last().expect("stages are never empty")
    }
}

impl fmt::Display for StageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageSpec::Single(s) => s.fmt(f),
            StageSpec::Sr(levels) => {
                let inner: Vec<String> = levels.iter().map(|k| format!("sdp:{k}")).collect();
                write!(f, "sr({})", inner.join(","))
            }
        }
    }
}

impl FromStr for StageSpec {
    type Err = CrvError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let Some(body) = s.strip_prefix("sr(") else {
            return s.parse().map(StageSpec::Single);
        };
        let body = body
            .strip_suffix(')')
            .ok_or_else(|| CrvError::Config(format!("unterminated SR group `{s}`")))?;
        let mut levels = Vec::new();
        for part in body.split(',') {
            match part.parse()? {
                Submethod::Sdp(k) => levels.push(k),
                Submethod::Lin => return Err(CrvError::Config(format!("SR group `{s}` may only hold sdp levels"))),
            }
        }
        Ok(StageSpec::Sr(levels))
    }
}

impl Serialize for StageSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StageSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Splits `lin,sr(sdp:1,sdp:2),sdp:3` on top-level commas.
pub fn parse_stages(list: &str) -> Result<Vec<StageSpec>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in list.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(list[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(CrvError::Config(format!("unbalanced parentheses in `{list}`")));
        }
    }
    if depth != 0 {
        return Err(CrvError::Config(format!("unbalanced parentheses in `{list}`")));
    }
    out.push(list[start..].parse()?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FsrConfig {
    pub enabled: bool,
    pub threshold: f64,
    pub calibration_fraction: f64,
    pub min_calibration: usize,
}

impl Default for FsrConfig {
    fn default() -> Self {
        FsrConfig {
            enabled: false,
            threshold: 0.05,
            calibration_fraction: 0.1,
            min_calibration: 5,
        }
    }
}

/// What the per-stage times `T_j` are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Timing {
    #[default]
    Wall,
    /// Solver work counters; wall times are zeroed so runs repeat byte for byte.
    CostUnits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub stages: Vec<StageSpec>,
    pub ladder: SubmethodLadder,
    pub lin_rule: RelaxationChoice,
    pub solver: SolverConfig,
    /// Stop each SDP solve once its verdict is settled. Bounds stay certified
    /// but are looser; FSR calibration always solves fully.
    pub early_stop: bool,
    pub fsr: FsrConfig,
    pub timing: Timing,
    /// Run PGD first and mark successes non-robust without verification.
    pub attack_prefilter: bool,
    /// Run PGD on every input for the `1 - E1` side of the TRA interval.
    pub run_attack: bool,
    pub attack: AttackConfig,
    /// Re-run later stages on inputs certified earlier, for per-stage RA.
    pub standalone: bool,
    /// Run the tightest verifier alone on every input as the speedup reference.
    pub baseline: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            stages: vec![StageSpec::Single(Submethod::Lin), StageSpec::Sr(vec![1, 2, 3])],
            ladder: SubmethodLadder::default(),
            lin_rule: RelaxationChoice::default(),
            solver: SolverConfig::default(),
            early_stop: true,
            fsr: FsrConfig::default(),
            timing: Timing::default(),
            attack_prefilter: false,
            run_attack: false,
            attack: AttackConfig::default(),
            standalone: true,
            baseline: true,
        }
    }
}

impl CascadeConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CascadeConfig = toml::from_str(text).map_err(|e| CrvError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CrvError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(CrvError::Config("cascade needs at least one stage".into()));
        }
        let levels = self.ladder.len();
        for stage in &self.stages {
            if let StageSpec::Sr(ks) = stage {
                if ks.is_empty() {
                    return Err(CrvError::Config("empty SR group".into()));
                }
                if ks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(CrvError::Config(format!(
                        "SR group `{stage}` must list levels loosest to tightest"
                    )));
                }
            }
            for sub in stage.submethods() {
                if let Submethod::Sdp(k) = sub {
                    if k == 0 || k > levels {
                        return Err(CrvError::Config(format!(
                            "`{sub}` is outside the {levels}-level ladder"
                        )));
                    }
                }
            }
        }
        let f = &self.fsr;
        if !(f.threshold > 0.0 && f.threshold < 1.0) {
            return Err(CrvError::Config(format!(
                "fsr threshold must lie in (0, 1), got {}",
                f.threshold
            )));
        }
        if !(f.calibration_fraction > 0.0 && f.calibration_fraction <= 1.0) {
            return Err(CrvError::Config(format!(
                "calibration fraction must lie in (0, 1], got {}",
                f.calibration_fraction
            )));
        }
        if !(self.solver.tol > 0.0 && self.solver.mu > 0.0 && self.solver.max_iters > 0) {
            return Err(CrvError::Config("solver needs positive tol, mu and max_iters".into()));
        }
        if !(self.solver.step > 0.0 && self.solver.step < 1.618) {
            return Err(CrvError::Config(format!(
                "solver step must lie in (0, 1.618), got {}",
                self.solver.step
            )));
        }
        if self.attack.step_size.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
            return Err(CrvError::Config("attack step size must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// The tightest verifier of the last stage, used as the speedup reference.
    pub fn tightest(&self) -> Submethod {
        self.stages.last().expect("validated").tightest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_strings_round_trip() {
        let stages = parse_stages("lin, sr(sdp:1,sdp:2,sdp:3),sdp:2").unwrap();
        assert_eq!(
            stages,
            vec![
                StageSpec::Single(Submethod::Lin),
                StageSpec::Sr(vec![1, 2, 3]),
                StageSpec::Single(Submethod::Sdp(2))
            ]
        );
        let text: Vec<String> = stages.iter().map(|s| s.to_string()).collect();
        assert_eq!(text.join(","), "lin,sr(sdp:1,sdp:2,sdp:3),sdp:2");
        assert!(parse_stages("sr(sdp:1,lin)").is_err());
        assert!(parse_stages("sr(sdp:1").is_err());
        assert!(parse_stages("sdp").is_err());
        assert!(parse_stages("lin)").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = CascadeConfig::default();
        cfg.validate().unwrap();
        cfg.stages = parse_stages("sdp:9").unwrap();
        assert!(matches!(cfg.validate(), Err(CrvError::Config(_))));
        cfg.stages = parse_stages("sr(sdp:2,sdp:1)").unwrap();
        assert!(cfg.validate().is_err());
        cfg.stages = vec![];
        assert!(cfg.validate().is_err());
        let mut cfg = CascadeConfig::default();
        cfg.fsr.threshold = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = CascadeConfig::from_toml(
            r#"
stages = ["lin", "sr(sdp:1,sdp:3)"]
timing = "cost-units"

[fsr]
enabled = true
threshold = 0.1

[solver]
tol = 1e-5
"#,
        )
        .unwrap();
        assert_eq!(cfg.stages[1], StageSpec::Sr(vec![1, 3]));
        assert!(cfg.fsr.enabled && cfg.fsr.min_calibration == 5);
        assert_eq!(cfg.solver.max_iters, 20_000);
        assert_eq!(cfg.timing, Timing::CostUnits);
        assert_eq!(CascadeConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(CascadeConfig::from_toml("stagez = []").is_err());
        assert!(CascadeConfig::from_toml("ladder = [[\"NORM\"], [\"INPUT_QC\"]]").is_err());
    }
}
