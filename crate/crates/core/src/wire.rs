//! Framed byte protocol for the device link.
//!
//! Layout of one frame on the wire:
//!
//! ```text
//! 7E | kind | seq | len | payload[len] | crc_hi | crc_lo
//! ```
//!
//! The CRC is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection,
//! no final xor) over `kind seq len payload`. Every byte after the sync byte
//! that equals 0x7E or 0x7D is sent as 0x7D followed by the byte XOR 0x20, so
//! a raw 0x7E only ever marks a frame start and the decoder can resync on it.

use std::fmt::Write as _;

use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{ActuatorCommand, Clutch};
use crate::score::HOLES;
use crate::sensing::SensorFrame;

pub const SYNC: u8 = 0x7E;
pub const ESCAPE: u8 = 0x7D;
pub const ESCAPE_XOR: u8 = 0x20;
pub const MAX_PAYLOAD: usize = 64;

const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLong(usize),
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("{kind:?} payload must be {expected} bytes, got {got}")]
    PayloadSize { kind: FrameKind, expected: usize, got: usize },
    #[error("bad field in payload: {0}")]
    BadField(String),
    #[error("expected a {expected:?} frame, got {got:?}")]
    WrongKind { expected: FrameKind, got: FrameKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Command = 0,
    Telemetry = 1,
    Heartbeat = 2,
}

impl TryFrom<u8> for FrameKind {
    type Error = WireError;

    fn try_from(b: u8) -> Result<Self, WireError> {
        match b {
            0 => Ok(FrameKind::Command),
            1 => Ok(FrameKind::Telemetry),
            2 => Ok(FrameKind::Heartbeat),
            other => Err(WireError::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub kind: FrameKind,
    pub seq: u8,
    payload: Vec<u8>,
}

pub fn crc16(bytes: &[u8]) -> u16 {
    CRC16.checksum(bytes)
}

impl Frame {
    pub fn new(kind: FrameKind, seq: u8, payload: Vec<u8>) -> Result<Self, WireError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(WireError::PayloadTooLong(payload.len()));
        }
        Ok(Self { kind, seq, payload })
    }

    pub fn heartbeat(seq: u8) -> Self {
        Self {
            kind: FrameKind::Heartbeat,
            seq,
            payload: Vec::new(),
        }
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Header and payload, the bytes the CRC covers.
    fn body(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(3 + self.payload.len());
        body.extend_from_slice(&[self.kind as u8, self.seq, self.payload.len() as u8]);
        body.extend_from_slice(&self.payload);
        body
    }

    pub fn crc(&self) -> u16 {
        crc16(&self.body())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = self.body();
        body.extend_from_slice(&self.crc().to_be_bytes());
        let mut out = Vec::with_capacity(body.len() + 4);
        out.push(SYNC);
        for b in body {
            if b == SYNC || b == ESCAPE {
                out.push(ESCAPE);
                out.push(b ^ ESCAPE_XOR);
            } else {
                out.push(b);
            }
        }
        out
    }
}

/// Stamps outgoing frames with a rolling sequence number.
#[derive(Debug, Clone, Default)]
pub struct Encoder {
    next_seq: u8,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_seq(&self) -> u8 {
        self.next_seq
    }

    pub fn frame(&mut self, kind: FrameKind, payload: Vec<u8>) -> Result<Frame, WireError> {
        let frame = Frame::new(kind, self.next_seq, payload)?;
        self.next_seq = self.next_seq.wrapping_add(1);
        Ok(frame)
    }

    pub fn encode(&mut self, kind: FrameKind, payload: Vec<u8>) -> Result<Vec<u8>, WireError> {
        Ok(self.frame(kind, payload)?.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum State {
    Hunting,
    InFrame { buf: Vec<u8>, escaped: bool },
}

/// Incremental decoder. Partial frames are kept across [`Decoder::push`]
/// calls; corrupt frames are dropped and counted.
#[derive(Debug, Clone)]
pub struct Decoder {
    state: State,
    errors: u64,
    discarded: u64,
}

impl Default for Decoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Decoder {
    pub fn new() -> Self {
        Self {
            state: State::Hunting,
            errors: 0,
            discarded: 0,
        }
    }

    /// Frames rejected for a bad CRC, length, kind or escape sequence.
    pub fn errors(&self) -> u64 {
        self.errors
    }

    /// Bytes skipped while hunting for a sync byte.
    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    pub fn in_frame(&self) -> bool {
        matches!(self.state, State::InFrame { .. })
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Frame> {
        let mut out = Vec::new();
        for &b in bytes {
            if let Some(f) = self.push_byte(b) {
                out.push(f);
            }
        }
        out
    }

    /// Ends the stream: a partial frame still pending counts as an error.
    pub fn finish(&mut self) {
        if self.in_frame() {
            self.errors += 1;
        }
        self.state = State::Hunting;
    }

    fn push_byte(&mut self, b: u8) -> Option<Frame> {
        if b == SYNC {
            if self.in_frame() {
                self.errors += 1;
            }
            self.state = State::InFrame {
                buf: Vec::with_capacity(8),
                escaped: false,
            };
            return None;
        }
        let State::InFrame { buf, escaped } = &mut self.state else {
            self.discarded += 1;
            return None;
        };
        let value = if *escaped {
            *escaped = false;
            let v = b ^ ESCAPE_XOR;
            if v != SYNC && v != ESCAPE {
                return self.reject();
            }
            v
        } else if b == ESCAPE {
            *escaped = true;
            return None;
        } else {
            b
        };
        buf.push(value);

        if buf.len() == 1 && FrameKind::try_from(value).is_err() {
            return self.reject();
        }
        if buf.len() == 3 && value as usize > MAX_PAYLOAD {
            return self.reject();
        }
        if buf.len() >= 3 && buf.len() == 3 + buf[2] as usize + 2 {
            let split = buf.len() - 2;
            let want = u16::from_be_bytes([buf[split], buf[split + 1]]);
            if crc16(&buf[..split]) != want {
                return self.reject();
            }
            let frame = Frame {
                kind: FrameKind::try_from(buf[0]).ok()?,
                seq: buf[1],
                payload: buf[3..split].to_vec(),
            };
            self.state = State::Hunting;
            return Some(frame);
        }
        None
    }

    fn reject(&mut self) -> Option<Frame> {
        self.errors += 1;
        self.state = State::Hunting;
        None
    }
}

/// Down-link actuator command: finger, target clutch, pulse length
/// (big-endian ms, 0 = hold).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommandPayload(pub ActuatorCommand);

impl CommandPayload {
    pub const LEN: usize = 4;

    pub fn to_bytes(&self) -> Result<Vec<u8>, WireError> {
        let cmd = self.0;
        cmd.validate().map_err(|e| WireError::BadField(e.to_string()))?;
        let pulse = cmd.pulse_ms.unwrap_or(0);
        let pulse = u16::try_from(pulse).map_err(|_| WireError::BadField(format!("pulse {pulse} ms exceeds 16 bits")))?;
        let target = match cmd.target {
            Clutch::Detached => 0,
            Clutch::AttachedUp => 1,
            Clutch::AttachedDown => 2,
        };
        let mut out = vec![cmd.finger as u8, target];
        out.extend_from_slice(&pulse.to_be_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != Self::LEN {
            return Err(WireError::PayloadSize {
                kind: FrameKind::Command,
                expected: Self::LEN,
                got: bytes.len(),
            });
        }
        let target = match bytes[1] {
            0 => Clutch::Detached,
            1 => Clutch::AttachedUp,
            2 => Clutch::AttachedDown,
            other => return Err(WireError::BadField(format!("clutch target {other}"))),
        };
        let pulse = u16::from_be_bytes([bytes[2], bytes[3]]) as u64;
        let cmd = ActuatorCommand {
            finger: bytes[0] as usize,
            target,
            pulse_ms: (pulse > 0).then_some(pulse),
        };
        cmd.validate().map_err(|e| WireError::BadField(e.to_string()))?;
        Ok(Self(cmd))
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, WireError> {
        expect_kind(frame, FrameKind::Command)?;
        Self::from_bytes(frame.payload())
    }
}

/// Up-link sensor sample: device time (big-endian ms) and one byte per hole,
/// 255 = fully covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TelemetryPayload {
    pub t_ms: u32,
    pub values: [u8; HOLES],
}

impl TelemetryPayload {
    pub const LEN: usize = 4 + HOLES;

    pub fn from_frame_values(frame: &SensorFrame) -> Result<Self, WireError> {
        let t_ms = u32::try_from(frame.t_ms).map_err(|_| WireError::BadField(format!("time {} ms exceeds 32 bits", frame.t_ms)))?;
        Ok(Self {
            t_ms,
            values: frame.values.map(|v| (v * 255.0).round() as u8),
        })
    }

    pub fn to_sensor_frame(&self) -> SensorFrame {
        SensorFrame {
            t_ms: self.t_ms as u64,
            values: self.values.map(|b| b as f64 / 255.0),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.t_ms.to_be_bytes().to_vec();
        out.extend_from_slice(&self.values);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != Self::LEN {
            return Err(WireError::PayloadSize {
                kind: FrameKind::Telemetry,
                expected: Self::LEN,
                got: bytes.len(),
            });
        }
        let mut values = [0u8; HOLES];
        values.copy_from_slice(&bytes[4..]);
        Ok(Self {
            t_ms: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            values,
        })
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, WireError> {
        expect_kind(frame, FrameKind::Telemetry)?;
        Self::from_bytes(frame.payload())
    }
}

fn expect_kind(frame: &Frame, expected: FrameKind) -> Result<(), WireError> {
    if frame.kind != expected {
        return Err(WireError::WrongKind {
            expected,
            got: frame.kind,
        });
    }
    Ok(())
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 3);
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{b:02X}");
    }
    s
}

/// Parses whitespace-separated hex byte pairs (`7E 02 00`); `0x` prefixes are
/// accepted.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, String> {
    text.split_whitespace()
        .map(|tok| {
            let t = tok.trim_start_matches("0x").trim_start_matches("0X");
            u8::from_str_radix(t, 16).map_err(|e| format!("bad hex byte '{tok}': {e}"))
        })
        .collect()
}

/// One line per decoded frame, followed by the decoder's error count.
pub fn dump(bytes: &[u8]) -> String {
    let mut dec = Decoder::new();
    let frames = dec.push(bytes);
    dec.finish();
    let mut out = String::new();
    for f in &frames {
        let _ = write!(out, "{:?} seq={} len={} crc={:04X}", f.kind, f.seq, f.payload().len(), f.crc());
        match f.kind {
            FrameKind::Command => match CommandPayload::from_frame(f) {
                Ok(CommandPayload(c)) => {
                    let _ = write!(
                        out,
                        " finger={} target={} pulse={}",
                        c.finger,
                        c.target.as_str(),
                        c.pulse_ms.map_or("-".to_string(), |p| p.to_string())
                    );
                }
                Err(e) => {
                    let _ = write!(out, " invalid: {e}");
                }
            },
            FrameKind::Telemetry => match TelemetryPayload::from_frame(f) {
                Ok(t) => {
                    let _ = write!(out, " t={} values={}", t.t_ms, hex(&t.values));
                }
                Err(e) => {
                    let _ = write!(out, " invalid: {e}");
                }
            },
            FrameKind::Heartbeat => {}
        }
        let _ = writeln!(out, " | {}", hex(&f.encode()));
    }
    let _ = writeln!(out, "frames={} errors={} discarded={}", frames.len(), dec.errors(), dec.discarded());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16(b"123456789"), 0x29B1);
        assert_eq!(crc16(&[0x02, 0x00, 0x00]), 0xA2FC);
    }

    #[test]
    fn heartbeat_vector() {
        assert_eq!(Frame::heartbeat(0).encode(), vec![0x7E, 0x02, 0x00, 0x00, 0xA2, 0xFC]);
    }

    #[test]
    fn command_vector() {
        let payload = CommandPayload(ActuatorCommand::pulse(3, Clutch::AttachedDown, 60))
            .to_bytes()
            .unwrap();
        let f = Frame::new(FrameKind::Command, 5, payload).unwrap();
        assert_eq!(
            f.encode(),
            vec![0x7E, 0x00, 0x05, 0x04, 0x03, 0x02, 0x00, 0x3C, 0x39, 0xAA]
        );
    }

    #[test]
    fn telemetry_vector_escapes_header_payload() {
        let t = TelemetryPayload {
            t_ms: 1000,
            values: [0xFF, 0xFF, 0x7E, 0x7D, 0x00, 0x80],
        };
        let f = Frame::new(FrameKind::Telemetry, 0x7E, t.to_bytes()).unwrap();
        assert_eq!(f.crc(), 0x5DA1);
        assert_eq!(
            hex(&f.encode()),
            "7E 01 7D 5E 0A 00 00 03 E8 FF FF 7D 5E 7D 5D 00 80 5D A1"
        );
        let mut d = Decoder::new();
        let got = d.push(&f.encode());
        assert_eq!(got, vec![f.clone()]);
        assert_eq!(TelemetryPayload::from_frame(&got[0]).unwrap(), t);
    }

    #[test]
    fn split_delivery() {
        let bytes = Frame::new(FrameKind::Command, 9, vec![1, 2, 0x7E, 4]).unwrap().encode();
        for cut in 0..=bytes.len() {
            let mut d = Decoder::new();
            let mut got = d.push(&bytes[..cut]);
            if cut < bytes.len() {
                assert!(got.is_empty());
            }
            got.extend(d.push(&bytes[cut..]));
            assert_eq!(got.len(), 1, "cut at {cut}");
            assert_eq!(d.errors(), 0);
        }
    }

    #[test]
    fn flipped_payload_bit_rejected() {
        let mut bytes = Frame::new(FrameKind::Command, 1, vec![0, 2, 0, 60]).unwrap().encode();
        bytes[5] ^= 0x04;
        let mut d = Decoder::new();
        assert!(d.push(&bytes).is_empty());
        d.finish();
        assert_eq!(d.errors(), 1);
    }

    #[test]
    fn oversized_length_rejected() {
        let mut d = Decoder::new();
        assert!(d.push(&[0x7E, 0x01, 0x00, 65]).is_empty());
        assert_eq!(d.errors(), 1);
        assert!(!d.in_frame());
        assert!(Frame::new(FrameKind::Telemetry, 0, vec![0; 65]).is_err());
    }

    #[test]
    fn encoder_seq_wraps() {
        let mut e = Encoder::new();
        for i in 0..300u32 {
            let f = e.frame(FrameKind::Heartbeat, vec![]).unwrap();
            assert_eq!(f.seq, (i % 256) as u8);
        }
    }

    #[test]
    fn payload_codecs() {
        let c = CommandPayload(ActuatorCommand::hold(5, Clutch::AttachedUp));
        assert_eq!(CommandPayload::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
        assert!(CommandPayload::from_bytes(&[6, 0, 0, 0]).is_err());
        assert!(CommandPayload::from_bytes(&[0, 3, 0, 0]).is_err());
        assert!(CommandPayload::from_bytes(&[0, 0, 0, 5]).is_err());
        assert!(CommandPayload(ActuatorCommand::pulse(0, Clutch::AttachedUp, 70_000))
            .to_bytes()
            .is_err());

        let sf = SensorFrame::new(42, [1.0, 0.0, 0.5, 0.25, 1.0, 0.0]).unwrap();
        let t = TelemetryPayload::from_frame_values(&sf).unwrap();
        assert_eq!(t.values, [255, 0, 128, 64, 255, 0]);
        let back = t.to_sensor_frame();
        assert_eq!(back.t_ms, 42);
        assert!(back.values.iter().zip(sf.values).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0));
    }

    #[test]
    fn dump_lists_frames() {
        let mut bytes = Frame::heartbeat(0).encode();
        bytes.extend([0x11, 0x22]);
        let text = dump(&bytes);
        assert!(text.contains("Heartbeat seq=0 len=0 crc=A2FC"));
        assert!(text.ends_with("frames=1 errors=0 discarded=2\n"));
        assert_eq!(parse_hex("7E 0x02 00").unwrap(), vec![0x7E, 2, 0]);
        assert!(parse_hex("7E zz").is_err());
    }

    fn frame_strategy() -> impl Strategy<Value = Frame> {
        (0u8..3, any::<u8>(), prop::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD))
            .prop_map(|(k, seq, payload)| Frame::new(FrameKind::try_from(k).unwrap(), seq, payload).unwrap())
    }

    proptest! {
        #[test]
        fn roundtrip(frames in prop::collection::vec(frame_strategy(), 1..8)) {
            let bytes: Vec<u8> = frames.iter().flat_map(|f| f.encode()).collect();
            let mut d = Decoder::new();
            prop_assert_eq!(d.push(&bytes), frames);
            prop_assert_eq!(d.errors(), 0);
        }

        #[test]
        fn only_sync_is_raw_sync(f in frame_strategy()) {
            let bytes = f.encode();
            prop_assert_eq!(bytes.iter().filter(|b| **b == SYNC).count(), 1);
        }

        #[test]
        fn recovers_after_garbage(garbage in prop::collection::vec(any::<u8>(), 0..200), f in frame_strategy()) {
            let mut d = Decoder::new();
            let _ = d.push(&garbage);
            let got = d.push(&f.encode());
            prop_assert_eq!(got.last(), Some(&f));
        }
    }
}
