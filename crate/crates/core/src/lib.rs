//! Privacy-preserving data perturbation from voltage-scaled SRAM failures.
//!
//! Values are written to words whose low-voltage cells fail at a known rate,
//! read back through a random bit shuffle, and the failed bits are replaced
//! with fresh noise. The crate models the memory, the resulting channel, its
//! privacy and utility, and curator-side distribution recovery.

pub mod bitcodec;
pub mod error;
pub mod harness;
pub mod mechanism;
pub mod memmodel;
pub mod privacy;
pub mod recovery;
pub mod utility;

pub use bitcodec::{decode, encode, PermPattern, PermSet, Word};
pub use error::{Error, Result};
pub use mechanism::{FailureProfile, Mechanism, MechanismConfig};
pub use memmodel::{CellSpec, ChipInstance};
pub use recovery::{CandidateSet, Distribution};
