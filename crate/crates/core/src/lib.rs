//! Discrete-event simulator for TDD channel access in 60 GHz mesh backhaul
//! networks: link budget, slot schedules, beamforming, link maintenance and a
//! central slot planner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod channel;
pub mod cli;
pub mod config;
pub mod controller;
pub mod domain;
pub mod engine;
pub mod error;
pub mod event;
pub mod frame;
pub mod maintenance;
pub mod scenario;
pub mod schedule;
pub mod trace;

pub use error::{Error, Result};
