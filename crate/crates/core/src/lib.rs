//! Contingency planning with conditional autoregressive normalizing flows.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece:
//!
//! - [`domain`]: positions, joint trajectories, observations, goals and the
//!   seeded random stream shared by everything else.
//! - [`diffkit`]: a small reverse-mode autodiff tape over dense matrices,
//!   MLP building blocks and a finite-difference gradient checker.
//! - [`flow`]: the per-agent affine autoregressive flow, its exact
//!   likelihood, sampling and maximum-likelihood training.
//! - [`planner`]: contingent planning in the robot's base-noise space plus
//!   the overconfident (joint) and underconfident ablations.
//! - [`simworld`]: a two-agent point-mass driving world with scripted
//!   humans, a suboptimal expert, dataset generation and closed-loop metrics.
//! - [`discrete`]: discrete autoregressive flows and an exhaustive
//!   representability oracle.
//! - [`valuelab`]: exact value functions of the four planner families on
//!   tabular games.
//!
//! File formats, the command line and parallel evaluation live in the std
//! companion crate.

#![no_std]

extern crate alloc;

pub mod diffkit;
pub mod discrete;
pub mod domain;
pub mod flow;
pub mod planner;
pub mod simworld;
pub mod valuelab;

pub(crate) mod math;

pub use domain::{
    Constraint, CoreError, EpisodeRecord, Goal, Intention, JointState, JointTrajectory,
    Observation, Position, Region, RngStream, ScenarioId,
};
