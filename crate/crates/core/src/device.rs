//! Simulated point-to-range linear servo with a clutch, plus the glove
//! linkage kinematics.
//!
//! Rail coordinates are millimetres measured from the bottom of the sliding
//! rail: the bottom pins the finger on the hole, the top holds it at its
//! highest point, mid-track leaves it free within the point-to-range window.
//! Geometry lengths are exact rationals so the range formula carries no
//! rounding; arm motion is simulated in `f64`.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{FingerPattern, HOLES};

/// Exact length in millimetres.
pub type Mm = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid length '{0}'")]
    BadLength(String),
    #[error("finger index {0} out of range 0..{HOLES}")]
    BadFinger(usize),
    #[error("pulse of {0} ms needs an attached target")]
    PulseWithoutAttach(u64),
    #[error("pulse duration must be positive")]
    ZeroPulse,
    #[error("time went backwards: {now} < {last}")]
    TimeRegression { now: u64, last: u64 },
    #[error("invalid linkage: {0}")]
    InvalidLinkage(String),
    #[error("angle {0} rad outside (0, pi)")]
    AngleOutOfRange(f64),
}

/// Parses a decimal millimetre value such as `40`, `12.5` or `0.0001`
/// without going through binary floating point.
pub fn parse_mm(text: &str) -> Result<Mm, DeviceError> {
    let bad = || DeviceError::BadLength(text.to_string());
    let s = text.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) || frac_part.len() > 12 {
        return Err(bad());
    }
    let whole: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let denom = 10i64.pow(frac_part.len() as u32);
    let frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
    let numer = whole
        .checked_mul(denom)
        .and_then(|w| w.checked_add(frac))
        .ok_or_else(bad)?;
    let value = Ratio::new(numer, denom);
    Ok(if neg { -value } else { value })
}

pub fn mm_to_f64(v: Mm) -> f64 {
    *v.numer() as f64 / *v.denom() as f64
}

/// Rail length and arm width of one linear servo. The finger is pinned at
/// `0` (hole) when attached down and at `track_len_mm` when attached up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServoGeometry {
    pub track_len_mm: Mm,
    pub arm_width_mm: Mm,
}

impl ServoGeometry {
    pub fn new(track_len_mm: Mm, arm_width_mm: Mm) -> Result<Self, DeviceError> {
        let g = Self {
            track_len_mm,
            arm_width_mm,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let zero = Mm::from_integer(0);
        if self.track_len_mm <= zero || self.arm_width_mm <= zero {
            return Err(DeviceError::InvalidGeometry(format!(
                "track {} mm and arm width {} mm must both be positive",
                self.track_len_mm, self.arm_width_mm
            )));
        }
        if self.arm_width_mm >= self.track_len_mm {
            return Err(DeviceError::InvalidGeometry(format!(
                "arm width {} mm leaves no free range on a {} mm track",
                self.arm_width_mm, self.track_len_mm
            )));
        }
        Ok(())
    }

    pub fn bottom(&self) -> Mm {
        Mm::from_integer(0)
    }

    pub fn mid(&self) -> Mm {
        self.track_len_mm / 2
    }

    pub fn top(&self) -> Mm {
        self.track_len_mm
    }

    /// Commanded arm position for a clutch state.
    pub fn setpoint(&self, clutch: Clutch) -> Mm {
        match clutch {
            Clutch::Detached => self.mid(),
            Clutch::AttachedUp => self.top(),
            Clutch::AttachedDown => self.bottom(),
        }
    }
}

impl Default for ServoGeometry {
    fn default() -> Self {
        Self {
            track_len_mm: Mm::from_integer(40),
            arm_width_mm: Mm::from_integer(10),
        }
    }
}

/// Width of the finger's free window: half the track minus half the arm.
pub fn free_range(g: &ServoGeometry) -> Result<Mm, DeviceError> {
    g.validate()?;
    Ok(g.track_len_mm / 2 - g.arm_width_mm / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clutch {
    Detached,
    AttachedUp,
    AttachedDown,
}

impl Clutch {
    pub fn is_attached(self) -> bool {
        self != Clutch::Detached
    }

    /// Attached state that realises one hole of a pattern.
    pub fn for_hole(pattern: &FingerPattern, finger: usize) -> Clutch {
        if pattern.is_closed(finger) {
            Clutch::AttachedDown
        } else {
            Clutch::AttachedUp
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Clutch::Detached => "detached",
            Clutch::AttachedUp => "up",
            Clutch::AttachedDown => "down",
        }
    }
}

impl fmt::Display for Clutch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerState {
    pub clutch: Clutch,
    pub arm_pos_mm: f64,
}

/// Clutch state and arm position of all six fingers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutchState {
    pub fingers: [FingerState; HOLES],
}

impl ClutchState {
    /// All fingers detached with arms resting mid-track.
    pub fn detached(g: &ServoGeometry) -> Self {
        let mid = mm_to_f64(g.mid());
        Self {
            fingers: [FingerState {
                clutch: Clutch::Detached,
                arm_pos_mm: mid,
            }; HOLES],
        }
    }

    pub fn clutches(&self) -> [Clutch; HOLES] {
        self.fingers.map(|f| f.clutch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub finger: usize,
    pub target: Clutch,
    /// Attached dwell before an automatic detach.
    pub pulse_ms: Option<u64>,
}

impl ActuatorCommand {
    pub fn hold(finger: usize, target: Clutch) -> Self {
        Self {
            finger,
            target,
            pulse_ms: None,
        }
    }

    pub fn pulse(finger: usize, target: Clutch, pulse_ms: u64) -> Self {
        Self {
            finger,
            target,
            pulse_ms: Some(pulse_ms),
        }
    }

    pub fn detach(finger: usize) -> Self {
        Self::hold(finger, Clutch::Detached)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.finger >= HOLES {
            return Err(DeviceError::BadFinger(self.finger));
        }
        match self.pulse_ms {
            Some(0) => Err(DeviceError::ZeroPulse),
            Some(p) if !self.target.is_attached() => Err(DeviceError::PulseWithoutAttach(p)),
            _ => Ok(()),
        }
    }
}

/// Applies one command: sets the finger's clutch target and, for pulses,
/// returns the time of the automatic detach. Arm motion is left to
/// [`DeviceSim`].
pub fn step(
    state: &ClutchState,
    cmd: &ActuatorCommand,
    now_ms: u64,
) -> Result<(ClutchState, Option<u64>), DeviceError> {
    cmd.validate()?;
    let mut next = *state;
    next.fingers[cmd.finger].clutch = cmd.target;
    Ok((next, cmd.pulse_ms.map(|p| now_ms + p)))
}

/// Closed interval of finger positions along the rail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

/// Positions one finger can reach: the free window around the arm when
/// detached, a single point when attached.
pub fn finger_free_interval(
    finger: &FingerState,
    g: &ServoGeometry,
) -> Result<Interval, DeviceError> {
    let point = |v: Mm| {
        let v = mm_to_f64(v);
        Interval { lo: v, hi: v }
    };
    Ok(match finger.clutch {
        Clutch::Detached => {
            let half = mm_to_f64(free_range(g)?) / 2.0;
            Interval {
                lo: finger.arm_pos_mm - half,
                hi: finger.arm_pos_mm + half,
            }
        }
        Clutch::AttachedUp => point(g.top()),
        Clutch::AttachedDown => point(g.bottom()),
    })
}

/// A clutch change that actually happened on the simulated device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub t_ms: u64,
    pub finger: usize,
    pub clutch: Clutch,
    /// True when produced by a pulse timeout rather than a command.
    pub auto: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceConfig {
    pub geometry: ServoGeometry,
    pub arm_speed_mm_per_s: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            geometry: ServoGeometry::default(),
            arm_speed_mm_per_s: 200.0,
        }
    }
}

/// Single-owner device simulator advanced by an injected clock.
///
/// A new command on a finger replaces that finger's pending auto-detach.
#[derive(Debug, Clone)]
pub struct DeviceSim {
    config: DeviceConfig,
    state: ClutchState,
    pending_detach: [Option<u64>; HOLES],
    now_ms: u64,
    transitions: Vec<Transition>,
}

impl DeviceSim {
    pub fn new(config: DeviceConfig) -> Result<Self, DeviceError> {
        config.geometry.validate()?;
        if !(config.arm_speed_mm_per_s.is_finite() && config.arm_speed_mm_per_s > 0.0) {
            return Err(DeviceError::InvalidGeometry(format!(
                "arm speed {} mm/s must be positive",
                config.arm_speed_mm_per_s
            )));
        }
        Ok(Self {
            state: ClutchState::detached(&config.geometry),
            config,
            pending_detach: [None; HOLES],
            now_ms: 0,
            transitions: Vec::new(),
        })
    }

    pub fn state(&self) -> &ClutchState {
        &self.state
    }

    pub fn geometry(&self) -> &ServoGeometry {
        &self.config.geometry
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn pending_detach(&self, finger: usize) -> Option<u64> {
        self.pending_detach[finger]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Commanded setpoint of a finger's arm.
    pub fn setpoint(&self, finger: usize) -> Mm {
        self.config.geometry.setpoint(self.state.fingers[finger].clutch)
    }

    /// Advances to `now_ms` and applies the command there.
    pub fn apply(&mut self, cmd: &ActuatorCommand, now_ms: u64) -> Result<Option<u64>, DeviceError> {
        cmd.validate()?;
        self.advance_to(now_ms)?;
        let (next, detach_at) = step(&self.state, cmd, now_ms)?;
        self.state = next;
        self.pending_detach[cmd.finger] = detach_at;
        self.transitions.push(Transition {
            t_ms: now_ms,
            finger: cmd.finger,
            clutch: cmd.target,
            auto: false,
        });
        Ok(detach_at)
    }

    /// Moves arms toward their setpoints and fires due auto-detaches, in
    /// time order.
    pub fn advance_to(&mut self, now_ms: u64) -> Result<(), DeviceError> {
        if now_ms < self.now_ms {
            return Err(DeviceError::TimeRegression {
                now: now_ms,
                last: self.now_ms,
            });
        }
        loop {
            let next_detach = self
                .pending_detach
                .iter()
                .enumerate()
                .filter_map(|(f, t)| t.filter(|t| *t <= now_ms).map(|t| (t, f)))
                .min();
            let Some((t, finger)) = next_detach else {
                break;
            };
            self.move_arms(t);
            self.pending_detach[finger] = None;
            self.state.fingers[finger].clutch = Clutch::Detached;
            self.transitions.push(Transition {
                t_ms: t,
                finger,
                clutch: Clutch::Detached,
                auto: true,
            });
        }
        self.move_arms(now_ms);
        Ok(())
    }

    fn move_arms(&mut self, to_ms: u64) {
        let dt_s = (to_ms - self.now_ms) as f64 / 1000.0;
        let max_travel = self.config.arm_speed_mm_per_s * dt_s;
        for f in self.state.fingers.iter_mut() {
            let target = mm_to_f64(self.config.geometry.setpoint(f.clutch));
            let delta = target - f.arm_pos_mm;
            f.arm_pos_mm = if delta.abs() <= max_travel {
                target
            } else {
                f.arm_pos_mm + max_travel.copysign(delta)
            };
        }
        self.now_ms = to_ms;
    }
}

/// Two rigid links meeting at the servo joint C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GloveLinkage {
    pub ac_mm: f64,
    pub bc_mm: f64,
}

impl GloveLinkage {
    pub fn new(ac_mm: f64, bc_mm: f64) -> Result<Self, DeviceError> {
        if !(ac_mm.is_finite() && bc_mm.is_finite() && ac_mm > 0.0 && bc_mm > 0.0) {
            return Err(DeviceError::InvalidLinkage(format!(
                "link lengths {ac_mm} and {bc_mm} must be positive"
            )));
        }
        Ok(Self { ac_mm, bc_mm })
    }
}

/// Distance between the bearings A and B for a servo angle at C.
pub fn glove_ab(l: &GloveLinkage, angle_acb_rad: f64) -> Result<f64, DeviceError> {
    if !(angle_acb_rad > 0.0 && angle_acb_rad < std::f64::consts::PI) {
        return Err(DeviceError::AngleOutOfRange(angle_acb_rad));
    }
    let (a, b) = (l.ac_mm, l.bc_mm);
    Ok((a * a + b * b - 2.0 * a * b * angle_acb_rad.cos()).sqrt())
}
