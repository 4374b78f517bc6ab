//! Sub-network controller: discovers the spectrum manager by name,
//! registers the sub-network's requirement, applies granted bands and
//! heartbeats while configured.

use serde::Serialize;

use crate::dsm::{SpectrumBand, SubnetId, SubnetRequirement, WireMessage};
use crate::kira::{DhtError, DhtRecord, NodeId};
use crate::sim::VirtualTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SncPhase {
    Discovering,
    Registering,
    Configured,
    /// Manager unreachable: the last band is kept while rediscovering.
    Degraded,
    Off,
}

impl SncPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            SncPhase::Discovering => "discovering",
            SncPhase::Registering => "registering",
            SncPhase::Configured => "configured",
            SncPhase::Degraded => "degraded",
            SncPhase::Off => "off",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SncConfig {
    pub heartbeat_period_ms: u64,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Wait for a GRANT before re-sending REGISTER.
    pub register_timeout_ms: u64,
    /// REGISTER attempts before falling back to discovery.
    pub register_attempts: u32,
    /// Consecutive undeliverable heartbeats that mean the manager is gone.
    pub lost_heartbeats: u32,
}

impl Default for SncConfig {
    fn default() -> Self {
        Self {
            heartbeat_period_ms: 1000,
            initial_backoff_ms: 500,
            max_backoff_ms: 4000,
            register_timeout_ms: 1000,
            register_attempts: 3,
            lost_heartbeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SncOutput {
    /// Resolve the manager's name; answer with [`SubnetController::on_lookup`].
    Lookup,
    Send {
        to: NodeId,
        msg: WireMessage,
    },
    /// Switch the sub-network to this band.
    Apply(SpectrumBand),
    Log {
        event: &'static str,
        details: String,
    },
}

fn log(event: &'static str, details: String) -> SncOutput {
    SncOutput::Log { event, details }
}

#[derive(Clone, Debug)]
pub struct SubnetController {
    requirement: SubnetRequirement,
    config: SncConfig,
    phase: SncPhase,
    version: u32,
    band: SpectrumBand,
    backoff_ms: u64,
    next_at: VirtualTime,
    manager: Option<NodeId>,
    attempts: u32,
    missed: u32,
    configured_once: bool,
}

impl SubnetController {
    pub fn new(requirement: SubnetRequirement, config: SncConfig) -> Self {
        Self {
            requirement,
            backoff_ms: config.initial_backoff_ms,
            config,
            phase: SncPhase::Off,
            version: 0,
            band: SpectrumBand::EMPTY,
            next_at: 0,
            manager: None,
            attempts: 0,
            missed: 0,
            configured_once: false,
        }
    }

    pub fn subnet(&self) -> SubnetId {
        self.requirement.subnet
    }

    pub fn requirement(&self) -> &SubnetRequirement {
        &self.requirement
    }

    pub fn phase(&self) -> SncPhase {
        self.phase
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn band(&self) -> SpectrumBand {
        self.band
    }

    pub fn manager(&self) -> Option<NodeId> {
        self.manager
    }

    pub fn backoff_ms(&self) -> u64 {
        self.backoff_ms
    }

    fn enter(&mut self, phase: SncPhase, now: VirtualTime, out: &mut Vec<SncOutput>) {
        if phase != self.phase {
            out.push(log(
                "SNC_PHASE",
                format!(
                    "{} {} -> {}",
                    self.subnet(),
                    self.phase.as_str(),
                    phase.as_str()
                ),
            ));
            self.phase = phase;
        }
        if matches!(phase, SncPhase::Discovering | SncPhase::Degraded) {
            self.next_at = now;
        }
    }

    pub fn power_on(&mut self, now: VirtualTime) -> Vec<SncOutput> {
        let mut out = Vec::new();
        if self.phase == SncPhase::Off {
            self.backoff_ms = self.config.initial_backoff_ms;
            self.missed = 0;
            self.configured_once = false;
            self.enter(SncPhase::Discovering, now, &mut out);
        }
        out
    }

    /// Stops the controller and releases the band. The plan version is
    /// kept so it never decreases.
    pub fn power_off(&mut self, now: VirtualTime) -> Vec<SncOutput> {
        let mut out = Vec::new();
        if self.phase != SncPhase::Off {
            self.enter(SncPhase::Off, now, &mut out);
            self.manager = None;
            self.set_band(SpectrumBand::EMPTY, &mut out);
        }
        out
    }

    fn set_band(&mut self, band: SpectrumBand, out: &mut Vec<SncOutput>) {
        if band != self.band {
            self.band = band;
            out.push(SncOutput::Apply(band));
        }
    }

    fn register_msg(&self) -> WireMessage {
        let r = &self.requirement;
        WireMessage::Register {
            subnet: r.subnet,
            qos: r.qos,
            requested_mhz: r.requested_mhz as u8,
            priority: r.priority,
        }
    }

    fn send_register(&mut self, to: NodeId, now: VirtualTime, out: &mut Vec<SncOutput>) {
        self.attempts += 1;
        self.next_at = now + self.config.register_timeout_ms;
        out.push(SncOutput::Send {
            to,
            msg: self.register_msg(),
        });
    }

    pub fn tick(&mut self, now: VirtualTime) -> Vec<SncOutput> {
        let mut out = Vec::new();
        if now < self.next_at {
            return out;
        }
        match self.phase {
            SncPhase::Off => {}
            SncPhase::Discovering | SncPhase::Degraded => {
                self.next_at = VirtualTime::MAX;
                out.push(SncOutput::Lookup);
            }
            SncPhase::Registering => {
                let to = self
                    .manager
                    .expect("registering implies a resolved manager");
                if self.attempts >= self.config.register_attempts {
                    out.push(log(
                        "REGISTER_TIMEOUT",
                        format!("{} after {} attempts", self.subnet(), self.attempts),
                    ));
                    let fallback = if self.configured_once {
                        SncPhase::Degraded
                    } else {
                        SncPhase::Discovering
                    };
                    self.enter(fallback, now, &mut out);
                    self.backoff(now, &mut out);
                } else {
                    self.send_register(to, now, &mut out);
                }
            }
            SncPhase::Configured => {
                let to = self.manager.expect("configured implies a resolved manager");
                self.next_at = now + self.config.heartbeat_period_ms;
                out.push(SncOutput::Send {
                    to,
                    msg: WireMessage::Heartbeat {
                        subnet: self.subnet(),
                        version: self.version,
                    },
                });
            }
        }
        out
    }

    fn backoff(&mut self, now: VirtualTime, out: &mut Vec<SncOutput>) {
        out.push(log(
            "DISCOVERY_RETRY",
            format!("{} in {} ms", self.subnet(), self.backoff_ms),
        ));
        self.next_at = now + self.backoff_ms;
        self.backoff_ms = (self.backoff_ms * 2).min(self.config.max_backoff_ms);
    }

    /// Result of the name lookup requested by [`SncOutput::Lookup`].
    pub fn on_lookup(
        &mut self,
        result: Result<DhtRecord, DhtError>,
        now: VirtualTime,
    ) -> Vec<SncOutput> {
        let mut out = Vec::new();
        if !matches!(self.phase, SncPhase::Discovering | SncPhase::Degraded) {
            return out;
        }
        match result {
            Ok(rec) => {
                let sm = rec.value.node;
                out.push(log(
                    "DISCOVERED",
                    format!("{} manager {sm} v{}", self.subnet(), rec.version),
                ));
                self.manager = Some(sm);
                self.attempts = 0;
                self.enter(SncPhase::Registering, now, &mut out);
                self.send_register(sm, now, &mut out);
            }
            Err(e) => {
                out.push(log("DISCOVERY_FAILED", format!("{} {e}", self.subnet())));
                self.backoff(now, &mut out);
            }
        }
        out
    }

    pub fn on_message(
        &mut self,
        from: NodeId,
        msg: WireMessage,
        now: VirtualTime,
    ) -> Vec<SncOutput> {
        let mut out = Vec::new();
        if self.phase == SncPhase::Off {
            return out;
        }
        match msg {
            WireMessage::Grant { version, band } | WireMessage::Reconfigure { version, band } => {
                let fresh = version > self.version
                    || (version == self.version && self.phase == SncPhase::Registering);
                if fresh {
                    self.version = version;
                    self.set_band(band, &mut out);
                    let shortfall = self
                        .requirement
                        .requested_mhz
                        .saturating_sub(band.width_mhz());
                    out.push(log(
                        "APPLIED",
                        format!(
                            "{} v{version} {band} ({}MHz, short {shortfall}MHz)",
                            self.subnet(),
                            band.width_mhz()
                        ),
                    ));
                    if self.phase != SncPhase::Configured {
                        self.manager = Some(from);
                        self.configured_once = true;
                        self.missed = 0;
                        self.backoff_ms = self.config.initial_backoff_ms;
                        self.enter(SncPhase::Configured, now, &mut out);
                        self.next_at = now + self.config.heartbeat_period_ms;
                    }
                } else if version < self.version {
                    out.push(log(
                        "STALE_PLAN",
                        format!("{} v{version} < v{}", self.subnet(), self.version),
                    ));
                }
                out.push(SncOutput::Send {
                    to: from,
                    msg: WireMessage::Ack {
                        version: self.version,
                    },
                });
            }
            WireMessage::Reregister { .. } => {
                if matches!(self.phase, SncPhase::Configured | SncPhase::Degraded) {
                    self.manager = Some(from);
                    self.attempts = 0;
                    self.enter(SncPhase::Registering, now, &mut out);
                    self.send_register(from, now, &mut out);
                }
            }
            other => out.push(log(
                "UNEXPECTED",
                format!("{} got {}", self.subnet(), other.name()),
            )),
        }
        out
    }

    /// Transport feedback for a heartbeat: undeliverable heartbeats in a row
    /// mean the manager is gone.
    pub fn on_heartbeat_report(&mut self, delivered: bool, now: VirtualTime) -> Vec<SncOutput> {
        let mut out = Vec::new();
        if self.phase != SncPhase::Configured {
            return out;
        }
        if delivered {
            self.missed = 0;
            return out;
        }
        self.missed += 1;
        if self.missed >= self.config.lost_heartbeats {
            out.push(log(
                "SM_LOST",
                format!(
                    "{} after {} undeliverable heartbeats",
                    self.subnet(),
                    self.missed
                ),
            ));
            self.missed = 0;
            self.backoff_ms = self.config.initial_backoff_ms;
            self.enter(SncPhase::Degraded, now, &mut out);
        }
        out
    }
}
