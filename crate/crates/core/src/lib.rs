//! Interactive-haptic flute tutoring engine.
//!
//! The crate is organised bottom-up: [`score`] and [`device`] model the music
//! and the clutch actuator, [`sensing`] turns capacitive frames into pitch
//! events, [`tutor`] runs the three guidance modes, [`strategy`] sequences
//! them into a scaffolded curriculum, [`simlab`] replays the study protocol on
//! simulated learners, [`wire`] frames the device link and [`service`] ties
//! sessions to the real-time message channel.

pub mod check;
pub mod config;
pub mod device;
pub mod score;
pub mod sensing;
pub mod service;
pub mod simlab;
pub mod strategy;
pub mod tutor;
pub mod wire;
