//! Simulation and verification toolkit for parallel position auctions (VCG,
//! GSP, GFP) with personalized reserves, ROAS-constrained autobidders and
//! individual welfare guarantees.

// Negated comparisons are how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auction;
pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod instances;
pub mod matrix;
pub mod report;
pub mod search;
pub mod welfare;

pub use auction::{
    allocate, clear_bids, pay, run_instance, AuctionResult, AuctionSpec, BidMatrix, InstanceSpec, MechanismKind,
    SlotAssignment,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use welfare::{efficient_outcome, EfficientOutcome, WelfareReport};
