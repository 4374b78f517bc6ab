//! Sub-network controller and token-passing sub-network emulation.

mod metrics;
mod snc;
mod token;
mod traffic;

pub use metrics::{nearest_rank, population_std_dev, SubnetMetrics, Window};
pub use snc::{SncConfig, SncOutput, SncPhase, SubnetController};
pub use token::{
    capacity_mbps, rotation_budget_bytes, FrameCounters, TokenSubnet, QUEUE_BOUND,
    SPECTRAL_EFFICIENCY, TOKEN_PERIOD_US,
};
pub use traffic::{default_devices, DeviceRole, DeviceSpec, ProfileKind, TrafficProfile};
