//! Central spectrum manager: allocation policy, wire format and the
//! manager's session state machine.

mod manager;
mod spectrum;
mod wire;

pub use manager::{
    Bootstrap, RegisterError, Session, SessionStatus, SmConfig, SmOutput, SpectrumManager, SM_KEY,
    SM_PORT,
};
pub use spectrum::{
    compute_allocation, AllocationPlan, Assignment, Qos, SpectrumBand, SpectrumError, SubnetId,
    SubnetRequirement, BAND_HIGH_MHZ, BAND_LOW_MHZ, MAX_REQUEST_MHZ,
};
pub use wire::{WireError, WireMessage};
