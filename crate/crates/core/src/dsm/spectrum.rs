use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::VirtualTime;

pub const BAND_LOW_MHZ: u32 = 3700;
pub const BAND_HIGH_MHZ: u32 = 3800;
pub const MAX_REQUEST_MHZ: u32 = BAND_HIGH_MHZ - BAND_LOW_MHZ;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubnetId(pub u16);

impl fmt::Display for SubnetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SN-{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qos {
    Urllc,
    Embb,
}

impl Qos {
    pub fn as_str(self) -> &'static str {
        match self {
            Qos::Urllc => "urllc",
            Qos::Embb => "embb",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Qos::Urllc => 0,
            Qos::Embb => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Qos::Urllc),
            1 => Some(Qos::Embb),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SpectrumError {
    #[error("band [{0}, {1}] is outside [3700, 3800] or inverted")]
    InvalidBand(u32, u32),
    #[error("requested width {0} MHz must be in 1..=100")]
    InvalidRequest(u32),
}

/// Contiguous interval `[low_mhz, high_mhz]`; width 0 means no spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SpectrumBand {
    low_mhz: u32,
    high_mhz: u32,
}

impl SpectrumBand {
    pub const EMPTY: SpectrumBand = SpectrumBand {
        low_mhz: BAND_LOW_MHZ,
        high_mhz: BAND_LOW_MHZ,
    };
    pub const FULL: SpectrumBand = SpectrumBand {
        low_mhz: BAND_LOW_MHZ,
        high_mhz: BAND_HIGH_MHZ,
    };

    pub fn new(low_mhz: u32, high_mhz: u32) -> Result<Self, SpectrumError> {
        if low_mhz < BAND_LOW_MHZ || high_mhz > BAND_HIGH_MHZ || low_mhz > high_mhz {
            return Err(SpectrumError::InvalidBand(low_mhz, high_mhz));
        }
        Ok(Self { low_mhz, high_mhz })
    }

    pub fn low_mhz(&self) -> u32 {
        self.low_mhz
    }

    pub fn high_mhz(&self) -> u32 {
        self.high_mhz
    }

    pub fn width_mhz(&self) -> u32 {
        self.high_mhz - self.low_mhz
    }

    pub fn is_empty(&self) -> bool {
        self.width_mhz() == 0
    }

    /// Interiors intersect. Touching edges do not overlap.
    pub fn overlaps(&self, other: &SpectrumBand) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && self.low_mhz < other.high_mhz
            && other.low_mhz < self.high_mhz
    }
}

impl fmt::Display for SpectrumBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.low_mhz, self.high_mhz)
    }
}

/// A sub-network's registered spectrum demand. Lower priority value is
/// more important.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SubnetRequirement {
    pub subnet: SubnetId,
    pub qos: Qos,
    pub requested_mhz: u32,
    pub priority: u8,
}

impl SubnetRequirement {
    pub fn new(
        subnet: SubnetId,
        qos: Qos,
        requested_mhz: u32,
        priority: u8,
    ) -> Result<Self, SpectrumError> {
        if requested_mhz == 0 || requested_mhz > MAX_REQUEST_MHZ {
            return Err(SpectrumError::InvalidRequest(requested_mhz));
        }
        Ok(Self {
            subnet,
            qos,
            requested_mhz,
            priority,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub band: SpectrumBand,
    pub requested_mhz: u32,
    /// Width secured in the guarantee phase, before sharing out leftovers.
    pub reserved_mhz: u32,
    pub priority: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AllocationPlan {
    pub version: u32,
    pub assignments: BTreeMap<SubnetId, Assignment>,
    pub computed_at: VirtualTime,
}

impl AllocationPlan {
    pub fn empty() -> Self {
        Self {
            version: 0,
            assignments: BTreeMap::new(),
            computed_at: 0,
        }
    }

    pub fn band_of(&self, subnet: SubnetId) -> SpectrumBand {
        self.assignments
            .get(&subnet)
            .map(|a| a.band)
            .unwrap_or(SpectrumBand::EMPTY)
    }

    pub fn width_of(&self, subnet: SubnetId) -> u32 {
        self.band_of(subnet).width_mhz()
    }

    pub fn total_mhz(&self) -> u32 {
        self.assignments.values().map(|a| a.band.width_mhz()).sum()
    }

    pub fn summary(&self) -> String {
        let parts: Vec<String> = self
            .assignments
            .iter()
            .map(|(s, a)| format!("{s}={}({}MHz)", a.band, a.band.width_mhz()))
            .collect();
        if parts.is_empty() {
            "empty".into()
        } else {
            parts.join(" ")
        }
    }
}

/// Two-phase allocation over `total`.
///
/// Guarantee phase: in (priority, subnet) order each subnet reserves
/// `min(requested, remaining)`. Expansion phase: whatever is left is shared
/// in proportion to the requested widths with largest-remainder rounding,
/// ties going to the lower subnet id. Bands are laid out contiguously from
/// the low edge in (priority, subnet) order.
pub fn compute_allocation(
    live: &[SubnetRequirement],
    total: SpectrumBand,
    version: u32,
    now: VirtualTime,
) -> AllocationPlan {
    let mut order: Vec<&SubnetRequirement> = live.iter().collect();
    order.sort_by_key(|r| (r.priority, r.subnet));
    order.dedup_by_key(|r| r.subnet);

    let supply = total.width_mhz();
    let mut remaining = supply;
    let mut reserved = Vec::with_capacity(order.len());
    for r in &order {
        let grant = r.requested_mhz.min(remaining);
        remaining -= grant;
        reserved.push(grant);
    }

    let extra = share_leftover(&order, remaining);

    let mut assignments = BTreeMap::new();
    let mut cursor = total.low_mhz();
    for (i, r) in order.iter().enumerate() {
        let width = reserved[i] + extra[i];
        let band =
            SpectrumBand::new(cursor, cursor + width).expect("widths sum to at most the supply");
        cursor += width;
        assignments.insert(
            r.subnet,
            Assignment {
                band,
                requested_mhz: r.requested_mhz,
                reserved_mhz: reserved[i],
                priority: r.priority,
            },
        );
    }
    AllocationPlan {
        version,
        assignments,
        computed_at: now,
    }
}

/// Largest-remainder split of `leftover` proportional to requested width.
fn share_leftover(order: &[&SubnetRequirement], leftover: u32) -> Vec<u32> {
    let weights: u64 = order.iter().map(|r| u64::from(r.requested_mhz)).sum();
    if leftover == 0 || weights == 0 {
        return vec![0; order.len()];
    }
    let mut shares = Vec::with_capacity(order.len());
    let mut remainders = Vec::with_capacity(order.len());
    for (i, r) in order.iter().enumerate() {
        let num = u64::from(leftover) * u64::from(r.requested_mhz);
        shares.push((num / weights) as u32);
        remainders.push((num % weights, r.subnet, i));
    }
    let handed: u32 = shares.iter().sum();
    // largest remainder first, then lower subnet id
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, _, i) in remainders.iter().take((leftover - handed) as usize) {
        shares[i] += 1;
    }
    shares
}
