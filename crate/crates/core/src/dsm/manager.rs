//! The spectrum manager as a pure state machine. The kernel feeds it
//! decoded messages and clock ticks and carries out the returned outputs.

use std::collections::BTreeMap;

use serde::Serialize;

use super::spectrum::{
    compute_allocation, AllocationPlan, SpectrumBand, SubnetId, SubnetRequirement,
};
use super::wire::WireMessage;
use crate::kira::NodeId;
use crate::sim::VirtualTime;

/// Well-known DHT name the manager registers under.
pub const SM_KEY: &str = "dynamic-spectrum-manager";
/// Service tag stored next to the manager's node id.
pub const SM_PORT: u16 = 4700;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmConfig {
    pub heartbeat_period_ms: u64,
    /// A subnet is failed once its last heartbeat is older than this many
    /// periods (strictly).
    pub timeout_periods: u64,
    pub push_retries: u32,
    pub retry_spacing_ms: u64,
}

impl Default for SmConfig {
    fn default() -> Self {
        Self {
            heartbeat_period_ms: 1000,
            timeout_periods: 3,
            push_retries: 2,
            retry_spacing_ms: 500,
        }
    }
}

impl SmConfig {
    pub fn failure_timeout_ms(&self) -> u64 {
        self.heartbeat_period_ms * self.timeout_periods
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Live,
    Failed,
    Deregistered,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Pending {
    msg: WireMessage,
    version: u32,
    sent_at: VirtualTime,
    retries_left: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub requirement: SubnetRequirement,
    /// Node id the controller registered from; pushes go here.
    pub address: NodeId,
    pub last_heartbeat: VirtualTime,
    pub status: SessionStatus,
    pub acked_version: u32,
    /// Last band pushed to the controller, for change suppression.
    pub sent_band: Option<SpectrumBand>,
    pending: Option<Pending>,
}

impl Session {
    pub fn awaiting_ack(&self) -> Option<u32> {
        self.pending.as_ref().map(|p| p.version)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SmOutput {
    Send {
        to: NodeId,
        subnet: SubnetId,
        msg: WireMessage,
    },
    Log {
        event: &'static str,
        details: String,
    },
}

fn log(event: &'static str, details: String) -> SmOutput {
    SmOutput::Log { event, details }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RegisterError {
    #[error("{0}: requested width must be in 1..=100 MHz")]
    InvalidWidth(SubnetId),
}

#[derive(Clone, Debug)]
pub struct SpectrumManager {
    config: SmConfig,
    total: SpectrumBand,
    sessions: BTreeMap<SubnetId, Session>,
    plan: AllocationPlan,
    recomputes: u64,
}

impl SpectrumManager {
    /// A manager whose first plan version is `version_floor + 1`, so a
    /// restarted manager never issues versions its controllers already hold.
    pub fn new(config: SmConfig, version_floor: u32) -> Self {
        let mut plan = AllocationPlan::empty();
        plan.version = version_floor;
        Self {
            config,
            total: SpectrumBand::FULL,
            sessions: BTreeMap::new(),
            plan,
            recomputes: 0,
        }
    }

    pub fn config(&self) -> &SmConfig {
        &self.config
    }

    pub fn plan(&self) -> &AllocationPlan {
        &self.plan
    }

    pub fn sessions(&self) -> &BTreeMap<SubnetId, Session> {
        &self.sessions
    }

    pub fn session(&self, subnet: SubnetId) -> Option<&Session> {
        self.sessions.get(&subnet)
    }

    /// Number of allocation recomputations so far.
    pub fn recomputes(&self) -> u64 {
        self.recomputes
    }

    pub fn on_message(
        &mut self,
        from: NodeId,
        msg: WireMessage,
        now: VirtualTime,
    ) -> Vec<SmOutput> {
        match msg {
            WireMessage::Register {
                subnet,
                qos,
                requested_mhz,
                priority,
            } => match SubnetRequirement::new(subnet, qos, u32::from(requested_mhz), priority) {
                Ok(req) => self.register(req, from, now).unwrap_or_default(),
                Err(_) => vec![log(
                    "REGISTER_REJECTED",
                    format!("{subnet} requested {requested_mhz} MHz"),
                )],
            },
            WireMessage::Heartbeat { subnet, version } => {
                self.on_heartbeat(subnet, version, from, now)
            }
            WireMessage::Ack { version } => self.on_ack(version, from),
            WireMessage::Deregister { subnet } => self.deregister(subnet, now),
            other => vec![log("UNEXPECTED", format!("{} from {from}", other.name()))],
        }
    }

    /// Stores the requirement, recomputes the plan over all live subnets and
    /// pushes changed bands. A repeated identical registration only re-sends
    /// the current grant.
    pub fn register(
        &mut self,
        req: SubnetRequirement,
        from: NodeId,
        now: VirtualTime,
    ) -> Result<Vec<SmOutput>, RegisterError> {
        if req.requested_mhz == 0 || req.requested_mhz > self.total.width_mhz() {
            return Err(RegisterError::InvalidWidth(req.subnet));
        }
        let subnet = req.subnet;
        if let Some(s) = self.sessions.get_mut(&subnet) {
            if s.status == SessionStatus::Live && s.requirement == req && s.address == from {
                s.last_heartbeat = now;
                let msg = WireMessage::Grant {
                    version: self.plan.version,
                    band: self.plan.band_of(subnet),
                };
                return Ok(self.push(subnet, msg, now));
            }
        }
        let event = match self.sessions.get(&subnet) {
            None => "REGISTER",
            Some(s) if s.status == SessionStatus::Live => "REGISTER_UPDATE",
            Some(_) => "REREGISTER",
        };
        let mut out = vec![log(
            event,
            format!(
                "{subnet} qos={} requested={}MHz prio={} from {from}",
                req.qos.as_str(),
                req.requested_mhz,
                req.priority
            ),
        )];
        self.sessions.insert(
            subnet,
            Session {
                requirement: req,
                address: from,
                last_heartbeat: now,
                status: SessionStatus::Live,
                acked_version: 0,
                sent_band: None,
                pending: None,
            },
        );
        out.extend(self.recompute(now, Some(subnet)));
        Ok(out)
    }

    pub fn on_heartbeat(
        &mut self,
        subnet: SubnetId,
        _version: u32,
        from: NodeId,
        now: VirtualTime,
    ) -> Vec<SmOutput> {
        match self.sessions.get_mut(&subnet) {
            Some(s) if s.status == SessionStatus::Live => {
                s.last_heartbeat = now;
                s.address = from;
                Vec::new()
            }
            other => {
                let why = match other {
                    None => "unknown",
                    Some(s) if s.status == SessionStatus::Failed => "failed",
                    Some(_) => "deregistered",
                };
                vec![
                    log("HEARTBEAT_UNKNOWN", format!("{subnet} ({why}) from {from}")),
                    SmOutput::Send {
                        to: from,
                        subnet,
                        msg: WireMessage::Reregister { subnet },
                    },
                ]
            }
        }
    }

    pub fn on_ack(&mut self, version: u32, from: NodeId) -> Vec<SmOutput> {
        let Some((&subnet, s)) = self.sessions.iter_mut().find(|(_, s)| s.address == from) else {
            return vec![log("ACK_UNKNOWN", format!("v{version} from {from}"))];
        };
        s.acked_version = s.acked_version.max(version);
        if s.pending.as_ref().is_some_and(|p| version >= p.version) {
            s.pending = None;
        }
        vec![log("ACK", format!("{subnet} v{version}"))]
    }

    pub fn deregister(&mut self, subnet: SubnetId, now: VirtualTime) -> Vec<SmOutput> {
        match self.sessions.get_mut(&subnet) {
            Some(s) if s.status == SessionStatus::Live => {
                s.status = SessionStatus::Deregistered;
                s.pending = None;
                s.sent_band = None;
                let mut out = vec![log("DEREGISTER", subnet.to_string())];
                out.extend(self.recompute(now, None));
                out
            }
            _ => Vec::new(),
        }
    }

    /// Marks live subnets whose last heartbeat is older than the timeout as
    /// failed and returns them. A subnet transitions at most once.
    pub fn detect_failures(&mut self, now: VirtualTime) -> Vec<SubnetId> {
        let timeout = self.config.failure_timeout_ms();
        let mut failed = Vec::new();
        for (&id, s) in self.sessions.iter_mut() {
            if s.status == SessionStatus::Live && now.saturating_sub(s.last_heartbeat) > timeout {
                s.status = SessionStatus::Failed;
                s.pending = None;
                s.sent_band = None;
                failed.push(id);
            }
        }
        failed
    }

    /// Periodic work: heartbeat timeouts and push retries. Any failure
    /// triggers exactly one recomputation.
    pub fn tick(&mut self, now: VirtualTime) -> Vec<SmOutput> {
        let mut out = Vec::new();
        let mut changed = false;
        for id in self.detect_failures(now) {
            let last = self.sessions[&id].last_heartbeat;
            out.push(log(
                "SUBNET_FAILED",
                format!("{id} heartbeat timeout (last {last})"),
            ));
            changed = true;
        }
        let spacing = self.config.retry_spacing_ms;
        for (&id, s) in self.sessions.iter_mut() {
            let Some(p) = s.pending.as_mut() else {
                continue;
            };
            if now < p.sent_at + spacing {
                continue;
            }
            if p.retries_left > 0 {
                p.retries_left -= 1;
                p.sent_at = now;
                out.push(log(
                    "PUSH_RETRY",
                    format!("{id} {} v{}", p.msg.name(), p.version),
                ));
                out.push(SmOutput::Send {
                    to: s.address,
                    subnet: id,
                    msg: p.msg,
                });
            } else {
                out.push(log(
                    "SUBNET_FAILED",
                    format!("{id} unacknowledged v{} after retries", p.version),
                ));
                s.status = SessionStatus::Failed;
                s.pending = None;
                s.sent_band = None;
                changed = true;
            }
        }
        if changed {
            out.extend(self.recompute(now, None));
        }
        out
    }

    fn recompute(&mut self, now: VirtualTime, registrant: Option<SubnetId>) -> Vec<SmOutput> {
        let live: Vec<SubnetRequirement> = self
            .sessions
            .values()
            .filter(|s| s.status == SessionStatus::Live)
            .map(|s| s.requirement)
            .collect();
        self.plan = compute_allocation(&live, self.total, self.plan.version + 1, now);
        self.recomputes += 1;
        let mut out = vec![log(
            "PLAN",
            format!("v{} {}", self.plan.version, self.plan.summary()),
        )];
        let version = self.plan.version;
        let targets: Vec<(SubnetId, SpectrumBand, bool)> = self
            .sessions
            .iter()
            .filter(|(_, s)| s.status == SessionStatus::Live)
            .map(|(&id, s)| {
                let band = self.plan.band_of(id);
                (id, band, s.sent_band != Some(band))
            })
            .collect();
        for (id, band, changed) in targets {
            if Some(id) == registrant {
                out.extend(self.push(id, WireMessage::Grant { version, band }, now));
            } else if changed {
                out.extend(self.push(id, WireMessage::Reconfigure { version, band }, now));
            }
        }
        out
    }

    fn push(&mut self, subnet: SubnetId, msg: WireMessage, now: VirtualTime) -> Vec<SmOutput> {
        let retries = self.config.push_retries;
        let s = self
            .sessions
            .get_mut(&subnet)
            .expect("pushes go to registered subnets");
        let (version, band) = match msg {
            WireMessage::Grant { version, band } | WireMessage::Reconfigure { version, band } => {
                (version, band)
            }
            _ => unreachable!("only grants and reconfigurations are pushed"),
        };
        s.sent_band = Some(band);
        s.pending = Some(Pending {
            msg,
            version,
            sent_at: now,
            retries_left: retries,
        });
        vec![
            log(
                msg.name(),
                format!("{subnet} v{version} {band} ({}MHz)", band.width_mhz()),
            ),
            SmOutput::Send {
                to: s.address,
                subnet,
                msg,
            },
        ]
    }
}

/// Retry schedule for publishing the manager's address: 1 s, doubling,
/// capped at 8 s.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bootstrap {
    pub generation: u64,
    next_attempt_at: VirtualTime,
    backoff_ms: u64,
    published: bool,
}

impl Bootstrap {
    pub const INITIAL_BACKOFF_MS: u64 = 1000;
    pub const MAX_BACKOFF_MS: u64 = 8000;

    pub fn new(generation: u64, now: VirtualTime) -> Self {
        Self {
            generation,
            next_attempt_at: now,
            backoff_ms: Self::INITIAL_BACKOFF_MS,
            published: false,
        }
    }

    pub fn due(&self, now: VirtualTime) -> bool {
        !self.published && now >= self.next_attempt_at
    }

    pub fn is_published(&self) -> bool {
        self.published
    }

    /// Records the outcome of an attempt; returns the delay before the next
    /// attempt on failure.
    pub fn on_result(&mut self, ok: bool, now: VirtualTime) -> Option<u64> {
        if ok {
            self.published = true;
            return None;
        }
        let wait = self.backoff_ms;
        self.next_attempt_at = now + wait;
        self.backoff_ms = (self.backoff_ms * 2).min(Self::MAX_BACKOFF_MS);
        Some(wait)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsm::Qos;

    fn addr(b: u8) -> NodeId {
        NodeId([b; 20])
    }

    fn req(id: u16, mhz: u32, prio: u8) -> SubnetRequirement {
        SubnetRequirement::new(
            SubnetId(id),
            if prio == 0 { Qos::Urllc } else { Qos::Embb },
            mhz,
            prio,
        )
        .unwrap()
    }

    fn sends(out: &[SmOutput]) -> Vec<(SubnetId, WireMessage)> {
        out.iter()
            .filter_map(|o| match o {
                SmOutput::Send { subnet, msg, .. } => Some((*subnet, *msg)),
                _ => None,
            })
            .collect()
    }

    fn events(out: &[SmOutput]) -> Vec<&'static str> {
        out.iter()
            .filter_map(|o| match o {
                SmOutput::Log { event, .. } => Some(*event),
                _ => None,
            })
            .collect()
    }

    fn both() -> SpectrumManager {
        let mut sm = SpectrumManager::new(SmConfig::default(), 0);
        sm.register(req(1, 40, 0), addr(1), 0).unwrap();
        sm.on_ack(1, addr(1));
        sm.register(req(2, 60, 1), addr(2), 0).unwrap();
        sm.on_ack(2, addr(1));
        sm.on_ack(2, addr(2));
        sm
    }

    #[test]
    fn lone_registration_gets_everything() {
        let mut sm = SpectrumManager::new(SmConfig::default(), 0);
        let out = sm.register(req(1, 40, 0), addr(1), 0).unwrap();
        assert_eq!(
            sends(&out),
            vec![(
                SubnetId(1),
                WireMessage::Grant {
                    version: 1,
                    band: SpectrumBand::FULL
                }
            )]
        );
    }

    #[test]
    fn second_registration_reconfigures_the_first() {
        let mut sm = SpectrumManager::new(SmConfig::default(), 0);
        sm.register(req(1, 40, 0), addr(1), 0).unwrap();
        let out = sm.register(req(2, 60, 1), addr(2), 10).unwrap();
        let cnc = SpectrumBand::new(3700, 3740).unwrap();
        let sensor = SpectrumBand::new(3740, 3800).unwrap();
        assert_eq!(
            sends(&out),
            vec![
                (
                    SubnetId(1),
                    WireMessage::Reconfigure {
                        version: 2,
                        band: cnc
                    }
                ),
                (
                    SubnetId(2),
                    WireMessage::Grant {
                        version: 2,
                        band: sensor
                    }
                ),
            ]
        );
    }

    #[test]
    fn zero_width_is_rejected() {
        let mut sm = SpectrumManager::new(SmConfig::default(), 0);
        let out = sm.on_message(
            addr(1),
            WireMessage::Register {
                subnet: SubnetId(1),
                qos: Qos::Urllc,
                requested_mhz: 0,
                priority: 0,
            },
            0,
        );
        assert_eq!(events(&out), vec!["REGISTER_REJECTED"]);
        assert!(sm.sessions().is_empty());
        let bad = SubnetRequirement {
            subnet: SubnetId(1),
            qos: Qos::Urllc,
            requested_mhz: 0,
            priority: 0,
        };
        assert_eq!(
            sm.register(bad, addr(1), 0),
            Err(RegisterError::InvalidWidth(SubnetId(1)))
        );
    }

    #[test]
    fn duplicate_registration_resends_grant_without_recompute() {
        let mut sm = both();
        let before = sm.recomputes();
        let out = sm.register(req(2, 60, 1), addr(2), 100).unwrap();
        assert_eq!(sm.recomputes(), before);
        assert_eq!(events(&out), vec!["GRANT"]);
        // a changed requirement is an update
        let out = sm.register(req(2, 30, 1), addr(2), 200).unwrap();
        assert_eq!(events(&out)[0], "REGISTER_UPDATE");
        assert_eq!(sm.plan().width_of(SubnetId(2)), 30 + 30 * 30 / 70 + 1);
    }

    #[test]
    fn heartbeat_timeout_is_strict() {
        let mut sm = both();
        sm.on_heartbeat(SubnetId(1), 2, addr(1), 1000);
        sm.on_heartbeat(SubnetId(2), 2, addr(2), 1000);
        assert!(sm.detect_failures(4000).is_empty());
        sm.on_heartbeat(SubnetId(1), 2, addr(1), 4000);
        assert_eq!(sm.detect_failures(4001), vec![SubnetId(2)]);
    }

    #[test]
    fn sensor_failure_gives_cnc_everything_once() {
        let mut sm = both();
        let mut recomputes = Vec::new();
        for t in (100..=6000).step_by(100) {
            sm.on_heartbeat(SubnetId(1), 2, addr(1), t);
            let out = sm.tick(t);
            for (_, msg) in sends(&out) {
                if let WireMessage::Reconfigure { version, .. } = msg {
                    sm.on_ack(version, addr(1));
                }
            }
            if events(&out).contains(&"PLAN") {
                recomputes.push((t, sends(&out)));
            }
        }
        assert_eq!(recomputes.len(), 1);
        let (t, sent) = &recomputes[0];
        assert_eq!(*t, 3100);
        assert_eq!(
            sent,
            &vec![(
                SubnetId(1),
                WireMessage::Reconfigure {
                    version: 3,
                    band: SpectrumBand::FULL
                }
            )]
        );
        assert_eq!(
            sm.session(SubnetId(2)).unwrap().status,
            SessionStatus::Failed
        );
    }

    #[test]
    fn cnc_failure_gives_sensor_everything() {
        let mut sm = both();
        for t in (100..=3100).step_by(100) {
            sm.on_heartbeat(SubnetId(2), 2, addr(2), t);
            sm.tick(t);
        }
        assert_eq!(sm.plan().band_of(SubnetId(2)), SpectrumBand::FULL);
        assert_eq!(sm.plan().width_of(SubnetId(1)), 0);
    }

    #[test]
    fn unacknowledged_push_retries_twice_then_fails() {
        let mut sm = SpectrumManager::new(SmConfig::default(), 0);
        sm.register(req(1, 40, 0), addr(1), 0).unwrap();
        sm.on_ack(1, addr(1));
        sm.register(req(2, 60, 1), addr(2), 0).unwrap();
        sm.on_ack(2, addr(2));
        // subnet 1 never acknowledges its reconfiguration to v2
        let mut retries = Vec::new();
        for t in (100..=1500).step_by(100) {
            sm.on_heartbeat(SubnetId(1), 1, addr(1), t);
            sm.on_heartbeat(SubnetId(2), 2, addr(2), t);
            let out = sm.tick(t);
            if events(&out).contains(&"PUSH_RETRY") {
                retries.push(t);
            }
            if t == 1500 {
                assert!(events(&out).contains(&"SUBNET_FAILED"));
                assert_eq!(sm.plan().band_of(SubnetId(2)), SpectrumBand::FULL);
            }
        }
        assert_eq!(retries, vec![500, 1000]);
        assert_eq!(
            sm.session(SubnetId(1)).unwrap().status,
            SessionStatus::Failed
        );
    }

    #[test]
    fn unchanged_bands_are_not_pushed() {
        let mut sm = both();
        // a third subnet registers and is refused spectrum: others keep theirs
        let out = sm.register(req(3, 10, 2), addr(3), 0).unwrap();
        let pushed: Vec<SubnetId> = sends(&out).into_iter().map(|(s, _)| s).collect();
        assert_eq!(pushed, vec![SubnetId(3)]);
        assert_eq!(sm.plan().width_of(SubnetId(3)), 0);
    }

    #[test]
    fn heartbeat_from_unknown_or_failed_asks_to_reregister() {
        let mut sm = both();
        let out = sm.on_heartbeat(SubnetId(9), 0, addr(9), 10);
        assert_eq!(
            sends(&out),
            vec![(
                SubnetId(9),
                WireMessage::Reregister {
                    subnet: SubnetId(9)
                }
            )]
        );
        sm.tick(5000);
        assert_eq!(
            sm.session(SubnetId(1)).unwrap().status,
            SessionStatus::Failed
        );
        let out = sm.on_heartbeat(SubnetId(1), 2, addr(1), 5001);
        assert_eq!(events(&out), vec!["HEARTBEAT_UNKNOWN"]);
        // failed -> live only by registering again
        let out = sm.register(req(1, 40, 0), addr(1), 5002).unwrap();
        assert_eq!(events(&out)[0], "REREGISTER");
        assert_eq!(sm.session(SubnetId(1)).unwrap().status, SessionStatus::Live);
    }

    #[test]
    fn versions_start_above_floor() {
        let mut sm = SpectrumManager::new(SmConfig::default(), 41);
        sm.register(req(1, 40, 0), addr(1), 0).unwrap();
        assert_eq!(sm.plan().version, 42);
    }

    #[test]
    fn deregistration_releases_spectrum() {
        let mut sm = both();
        sm.deregister(SubnetId(2), 10);
        assert_eq!(sm.plan().band_of(SubnetId(1)), SpectrumBand::FULL);
        assert_eq!(
            sm.session(SubnetId(2)).unwrap().status,
            SessionStatus::Deregistered
        );
    }

    #[test]
    fn bootstrap_backoff_doubles_to_cap() {
        let mut b = Bootstrap::new(1, 0);
        let mut now = 0;
        let mut waits = Vec::new();
        for _ in 0..6 {
            assert!(b.due(now));
            let w = b.on_result(false, now).unwrap();
            assert!(!b.due(now + w - 1));
            waits.push(w);
            now += w;
        }
        assert_eq!(waits, vec![1000, 2000, 4000, 8000, 8000, 8000]);
        assert_eq!(b.on_result(true, now), None);
        assert!(!b.due(now + 100_000));
    }
}
