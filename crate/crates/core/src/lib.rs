#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod aggregate;
pub mod attgt;
pub mod dgp;
pub mod error;
pub mod mboot;
pub mod panel;
pub mod pretest;
pub mod propensity;
pub mod stats;

pub use error::{Error, Result};
pub use panel::{CellIndex, CellKind, Cohort, Panel, PanelInput, UnitRecord};
