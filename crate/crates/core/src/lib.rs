//! A desk-scale laboratory for reward-weighted supervised fine-tuning of
//! contextual-bandit recommendation policies.
//!
//! The library provides:
//!
//! * synthetic low-rank environments and offline logged datasets ([`env`]),
//! * exact exponential tilting of a logging policy by estimated rewards and
//!   the associated divergences ([`tilt`]),
//! * weighted maximum-likelihood training of softmax policies ([`train`]),
//!   plus the trajectory-level extension ([`mdp`]),
//! * learned reward models and PPO/DPO baselines that optimize them
//!   ([`rm`], [`ppo`], [`dpo`], [`hackdemo`]),
//! * Monte-Carlo and exact checkers for the policy-improvement guarantees
//!   of the tilted policy under reward estimation error ([`bounds`]),
//! * top-K ranking metrics and oracle evaluation ([`metrics`]),
//! * MovieLens-style ratings ingestion ([`movielens`]) and deterministic
//!   on-disk formats ([`dataio`]).
//!
//! Everything is deterministic given a seed: random streams are derived
//! from `(seed, purpose label)` so independent pipeline stages never share
//! or race a generator.

pub mod benchmark;
pub mod bounds;
pub mod dataio;
pub mod dpo;
pub mod env;
pub mod error;
pub mod hackdemo;
pub mod mdp;
pub mod metrics;
pub mod movielens;
pub mod policy;
pub mod ppo;
pub mod rm;
pub mod rng;
pub mod tilt;
pub mod train;

pub use error::{Error, Result};
