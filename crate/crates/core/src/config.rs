//! Engine configuration file (TOML).
//!
//! Every section and key is optional; missing values take the built-in
//! defaults. Unknown keys are rejected so typos do not go unnoticed.
//!
//! ```toml
//! [device]
//! track_len_mm = 40
//! arm_width_mm = "10.5"
//!
//! [tutor]
//! delta_t_ms = 200
//!
//! [simlab]
//! gain_active = 0.4
//!
//! [link]
//! port = 8765
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{parse_mm, DeviceConfig, Mm, ServoGeometry};
use crate::sensing::{DEFAULT_DEBOUNCE_MS, DEFAULT_THRESHOLD};
use crate::simlab::{ExperimentPlan, LearnerParams, Population, SimConfig};
use crate::strategy::{ExamStrictness, StrategyConfig};
use crate::tutor::{HintScope, TutorConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config value: {0}")]
    Invalid(String),
}

/// A length written as an integer, a float or a decimal string. Strings
/// and integers are read exactly; `"a/b"` fractions are accepted too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Length {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Length {
    fn to_mm(&self) -> Result<Mm, ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        match self {
            Length::Int(i) => Ok(Mm::from_integer(*i)),
            Length::Float(f) if f.is_finite() => parse_mm(&f.to_string()).map_err(|e| invalid(e.to_string())),
            Length::Float(f) => Err(invalid(format!("length {f} is not finite"))),
            Length::Text(s) => match s.split_once('/') {
                Some((n, d)) => {
                    let n: i64 = n.trim().parse().map_err(|_| invalid(format!("bad fraction '{s}'")))?;
                    let d: i64 = d.trim().parse().map_err(|_| invalid(format!("bad fraction '{s}'")))?;
                    if d == 0 {
                        return Err(invalid(format!("zero denominator in '{s}'")));
                    }
                    Ok(Mm::new(n, d))
                }
                None => parse_mm(s).map_err(|e| invalid(e.to_string())),
            },
        }
    }

    fn from_mm(v: Mm) -> Self {
        if v.is_integer() {
            return Length::Int(v.to_integer());
        }
        // exact decimal when the denominator only has factors 2 and 5
        let mut d = *v.denom();
        let mut digits = 0u32;
        while d % 10 == 0 || d % 2 == 0 || d % 5 == 0 {
            if d % 10 == 0 {
                d /= 10;
            } else if d % 2 == 0 {
                d /= 2;
            } else {
                d /= 5;
            }
            digits += 1;
        }
        if d == 1 && digits <= 12 {
            let scale = 10i64.pow(digits);
            let scaled = (v * Mm::from_integer(scale)).to_integer();
            let sign = if scaled < 0 { "-" } else { "" };
            let a = scaled.unsigned_abs();
            let s = format!("{sign}{}.{:0width$}", a / scale as u64, a % scale as u64, width = digits as usize);
            Length::Text(s)
        } else {
            Length::Text(format!("{}/{}", v.numer(), v.denom()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DeviceSection {
    track_len_mm: Length,
    arm_width_mm: Length,
    arm_speed_mm_per_s: f64,
}

impl Default for DeviceSection {
    fn default() -> Self {
        let d = DeviceConfig::default();
        Self {
            track_len_mm: Length::from_mm(d.geometry.track_len_mm),
            arm_width_mm: Length::from_mm(d.geometry.arm_width_mm),
            arm_speed_mm_per_s: d.arm_speed_mm_per_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    pub threshold: f64,
    pub debounce_ms: u64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            debounce_ms: DEFAULT_DEBOUNCE_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TutorSection {
    delta_t_ms: u64,
    hint_pulse_ms: u64,
    tempo_scale: f64,
    hint_scope: HintScope,
}

impl Default for TutorSection {
    fn default() -> Self {
        let t = TutorConfig::default();
        Self {
            delta_t_ms: t.delta_t_ms,
            hint_pulse_ms: t.hint_pulse_ms,
            tempo_scale: t.tempo_scale,
            hint_scope: t.hint_scope,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StrategySection {
    advance_error_threshold: f64,
    regress_error_threshold: f64,
    min_passes_per_phase: usize,
    exam_strictness: ExamStrictness,
}

impl Default for StrategySection {
    fn default() -> Self {
        let s = StrategyConfig::default();
        Self {
            advance_error_threshold: s.advance_error_threshold,
            regress_error_threshold: s.regress_error_threshold,
            min_passes_per_phase: s.min_passes_per_phase,
            exam_strictness: ExamStrictness::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimlabSection {
    gain_passive: f64,
    gain_active: f64,
    decay_per_min: f64,
    motor_noise: f64,
    latency_min_ms: u64,
    latency_max_ms: u64,
    initial_mastery: f64,
    jitter: f64,
    participants: usize,
    cutoff_min: f64,
    forget_min: f64,
    longterm_days: usize,
    longterm_gap_min: f64,
}

impl Default for SimlabSection {
    fn default() -> Self {
        let l = LearnerParams::default();
        let p = ExperimentPlan::default();
        Self {
            gain_passive: l.gain_passive,
            gain_active: l.gain_active,
            decay_per_min: l.decay_per_min,
            motor_noise: l.motor_noise,
            latency_min_ms: l.latency_min_ms,
            latency_max_ms: l.latency_max_ms,
            initial_mastery: l.initial_mastery,
            jitter: Population::default().jitter,
            participants: p.participants,
            cutoff_min: p.cutoff_min,
            forget_min: p.forget_min,
            longterm_days: p.longterm_days,
            longterm_gap_min: p.longterm_gap_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Simulated device link latency.
    pub delay_ms: u64,
    /// Port of the real-time channel.
    pub port: u16,
    /// Session clock step while serving.
    pub tick_ms: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            delay_ms: 10,
            port: 8765,
            tick_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    device: DeviceSection,
    sensing: SensingConfig,
    tutor: TutorSection,
    strategy: StrategySection,
    simlab: SimlabSection,
    link: LinkConfig,
}

/// Everything tunable in the engine, validated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub device: DeviceConfig,
    pub sensing: SensingConfig,
    pub tutor: TutorConfig,
    pub strategy: StrategyConfig,
    pub exam_strictness: ExamStrictness,
    pub population: Population,
    pub plan: ExperimentPlan,
    pub link: LinkConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::from_file(ConfigFile::default()).expect("defaults are valid")
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn from_file(f: ConfigFile) -> Result<Self, ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        let geometry = ServoGeometry::new(f.device.track_len_mm.to_mm()?, f.device.arm_width_mm.to_mm()?)
            .map_err(|e| invalid(e.to_string()))?;
        let device = DeviceConfig {
            geometry,
            arm_speed_mm_per_s: f.device.arm_speed_mm_per_s,
        };
        crate::device::DeviceSim::new(device).map_err(|e| invalid(e.to_string()))?;

        if !(f.sensing.threshold > 0.0 && f.sensing.threshold < 1.0) {
            return Err(invalid(format!("sensing threshold {} outside (0, 1)", f.sensing.threshold)));
        }
        let tutor = TutorConfig {
            delta_t_ms: f.tutor.delta_t_ms,
            hint_pulse_ms: f.tutor.hint_pulse_ms,
            tempo_scale: f.tutor.tempo_scale,
            hint_scope: f.tutor.hint_scope,
        };
        tutor.validate().map_err(|e| invalid(e.to_string()))?;
        let strategy = StrategyConfig {
            advance_error_threshold: f.strategy.advance_error_threshold,
            regress_error_threshold: f.strategy.regress_error_threshold,
            min_passes_per_phase: f.strategy.min_passes_per_phase,
        };
        strategy.validate().map_err(|e| invalid(e.to_string()))?;

        let s = f.simlab;
        let population = Population {
            base: LearnerParams {
                gain_passive: s.gain_passive,
                gain_active: s.gain_active,
                decay_per_min: s.decay_per_min,
                motor_noise: s.motor_noise,
                latency_min_ms: s.latency_min_ms,
                latency_max_ms: s.latency_max_ms,
                initial_mastery: s.initial_mastery,
            },
            jitter: s.jitter,
        };
        population.validate().map_err(|e| invalid(e.to_string()))?;
        let plan = ExperimentPlan {
            participants: s.participants,
            cutoff_min: s.cutoff_min,
            forget_min: s.forget_min,
            longterm_days: s.longterm_days,
            longterm_gap_min: s.longterm_gap_min,
            strategy,
            sim: SimConfig {
                tutor,
                link_delay_ms: f.link.delay_ms,
                exam_strictness: f.strategy.exam_strictness,
            },
        };
        plan.validate().map_err(|e| invalid(e.to_string()))?;
        if f.link.tick_ms == 0 {
            return Err(invalid("link tick_ms must be at least 1".into()));
        }
        Ok(Self {
            device,
            sensing: f.sensing,
            tutor,
            strategy,
            exam_strictness: f.strategy.exam_strictness,
            population,
            plan,
            link: f.link,
        })
    }

    pub fn to_toml(&self) -> String {
        let b = self.population.base;
        let file = ConfigFile {
            device: DeviceSection {
                track_len_mm: Length::from_mm(self.device.geometry.track_len_mm),
                arm_width_mm: Length::from_mm(self.device.geometry.arm_width_mm),
                arm_speed_mm_per_s: self.device.arm_speed_mm_per_s,
            },
            sensing: self.sensing,
            tutor: TutorSection {
                delta_t_ms: self.tutor.delta_t_ms,
                hint_pulse_ms: self.tutor.hint_pulse_ms,
                tempo_scale: self.tutor.tempo_scale,
                hint_scope: self.tutor.hint_scope,
            },
            strategy: StrategySection {
                advance_error_threshold: self.strategy.advance_error_threshold,
                regress_error_threshold: self.strategy.regress_error_threshold,
                min_passes_per_phase: self.strategy.min_passes_per_phase,
                exam_strictness: self.exam_strictness,
            },
            simlab: SimlabSection {
                gain_passive: b.gain_passive,
                gain_active: b.gain_active,
                decay_per_min: b.decay_per_min,
                motor_noise: b.motor_noise,
                latency_min_ms: b.latency_min_ms,
                latency_max_ms: b.latency_max_ms,
                initial_mastery: b.initial_mastery,
                jitter: self.population.jitter,
                participants: self.plan.participants,
                cutoff_min: self.plan.cutoff_min,
                forget_min: self.plan.forget_min,
                longterm_days: self.plan.longterm_days,
                longterm_gap_min: self.plan.longterm_gap_min,
            },
            link: self.link,
        };
        toml::to_string(&file).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c = EngineConfig::from_toml("").unwrap();
        assert_eq!(c, EngineConfig::default());
        assert_eq!(c.tutor.delta_t_ms, 200);
        assert_eq!(c.plan.sim.link_delay_ms, 10);
        assert_eq!(c.population.base.gain_active, 0.4);
        assert_eq!(c.device.geometry.track_len_mm, Mm::from_integer(40));
    }

    #[test]
    fn lengths_are_exact() {
        let c = EngineConfig::from_toml("[device]\ntrack_len_mm = \"40.1\"\narm_width_mm = 0.1\n").unwrap();
        assert_eq!(c.device.geometry.track_len_mm, Mm::new(401, 10));
        assert_eq!(c.device.geometry.arm_width_mm, Mm::new(1, 10));
        let c = EngineConfig::from_toml("[device]\narm_width_mm = \"1/3\"\n").unwrap();
        assert_eq!(c.device.geometry.arm_width_mm, Mm::new(1, 3));
    }

    #[test]
    fn roundtrip() {
        let text = "[device]\narm_width_mm = \"12.25\"\n[tutor]\ndelta_t_ms = 150\nhint_scope = \"full\"\n[simlab]\ngain_active = 0.3\njitter = 0.1\n[link]\nport = 9000\n[strategy]\nexam_strictness = \"contiguous\"\n";
        let c = EngineConfig::from_toml(text).unwrap();
        assert_eq!(EngineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let third = EngineConfig::from_toml("[device]\narm_width_mm = \"1/3\"\n").unwrap();
        assert_eq!(EngineConfig::from_toml(&third.to_toml()).unwrap(), third);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[device]\narm_width_mm = 50\n",
            "[tutor]\ndelta_t_ms = 0\n",
            "[strategy]\nadvance_error_threshold = 0.9\n",
            "[simlab]\ngain_active = 0.1\n",
            "[sensing]\nthreshold = 1.0\n",
            "[link]\ntick_ms = 0\n",
        ] {
            assert!(matches!(EngineConfig::from_toml(text), Err(ConfigError::Invalid(_))), "{text}");
        }
        assert!(matches!(
            EngineConfig::from_toml("[tutor]\ndelta_tms = 3\n"),
            Err(ConfigError::Syntax(_))
        ));
        assert!(matches!(EngineConfig::from_toml("[tutor"), Err(ConfigError::Syntax(_))));
    }
}
