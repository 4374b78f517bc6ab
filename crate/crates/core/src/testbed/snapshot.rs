use serde::Serialize;

use super::Testbed;
use crate::dsm::{Qos, SessionStatus, SpectrumBand};
use crate::sim::{LogRecord, VirtualTime};
use crate::subnet::{FrameCounters, SncPhase, SubnetMetrics};

/// Everything an operator view needs, taken between two kernel steps.
/// Collections are ordered so serialization is deterministic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateSnapshot {
    pub t: VirtualTime,
    pub converged: bool,
    pub gossip_rounds: u64,
    pub nodes: Vec<NodeView>,
    pub links: Vec<LinkView>,
    pub plan: PlanView,
    pub manager: Option<ManagerView>,
    pub subnets: Vec<SubnetView>,
    pub log_len: usize,
    pub log_tail: Vec<LogRecord>,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeView {
    pub node: u32,
    pub up: bool,
    /// Backbone identity, 40 hex characters; absent while the node is down.
    pub id: Option<String>,
    pub contacts: usize,
    pub sm_host: bool,
    pub master_of: Option<u16>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LinkView {
    pub a: u32,
    pub b: u32,
    pub latency_ms: u64,
    pub up: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BandView {
    pub low_mhz: u32,
    pub high_mhz: u32,
    pub width_mhz: u32,
}

impl From<SpectrumBand> for BandView {
    fn from(b: SpectrumBand) -> Self {
        Self {
            low_mhz: b.low_mhz(),
            high_mhz: b.high_mhz(),
            width_mhz: b.width_mhz(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlanView {
    pub version: u32,
    pub computed_at: VirtualTime,
    pub total_mhz: u32,
    pub assignments: Vec<(u16, BandView)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SessionView {
    pub subnet: u16,
    pub status: SessionStatus,
    pub last_heartbeat: VirtualTime,
    pub acked_version: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ManagerView {
    pub node: u32,
    pub generation: u64,
    pub sessions: Vec<SessionView>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubnetView {
    pub subnet: u16,
    pub name: String,
    pub node: u32,
    pub qos: Qos,
    pub requested_mhz: u32,
    pub priority: u8,
    pub powered: bool,
    pub phase: SncPhase,
    pub version: u32,
    pub band: BandView,
    pub metrics: Option<SubnetMetrics>,
    pub frames: FrameCounters,
}

pub(super) fn build(tb: &Testbed, log_tail: usize) -> StateSnapshot {
    let nodes = tb
        .topo
        .nodes()
        .map(|n| NodeView {
            node: n.0,
            up: tb.topo.is_node_up(n),
            id: tb.kira.id_of(n).map(|id| id.to_string()),
            contacts: tb.kira.node(n).map_or(0, |k| k.table.len()),
            sm_host: n == tb.sm_host,
            master_of: tb
                .subnets
                .values()
                .find(|s| s.attachment.node == n)
                .map(|s| s.attachment.subnet.0),
        })
        .collect();
    let links = tb
        .topo
        .links()
        .map(|((a, b), l)| LinkView {
            a: a.0,
            b: b.0,
            latency_ms: l.latency_ms,
            up: tb.topo.is_link_usable(a, b),
        })
        .collect();
    let plan = tb.plan();
    let plan = PlanView {
        version: plan.version,
        computed_at: plan.computed_at,
        total_mhz: plan.total_mhz(),
        assignments: plan
            .assignments
            .iter()
            .map(|(s, a)| (s.0, a.band.into()))
            .collect(),
    };
    let manager = tb.manager.as_ref().map(|m| ManagerView {
        node: tb.sm_host.0,
        generation: m.bootstrap.generation,
        sessions: m
            .sm
            .sessions()
            .iter()
            .map(|(s, sess)| SessionView {
                subnet: s.0,
                status: sess.status,
                last_heartbeat: sess.last_heartbeat,
                acked_version: sess.acked_version,
            })
            .collect(),
    });
    let subnets = tb
        .subnets
        .iter()
        .map(|(id, s)| SubnetView {
            subnet: id.0,
            name: s.attachment.name.clone(),
            node: s.attachment.node.0,
            qos: s.attachment.requirement.qos,
            requested_mhz: s.attachment.requirement.requested_mhz,
            priority: s.attachment.requirement.priority,
            powered: s.powered,
            phase: s.snc.phase(),
            version: s.snc.version(),
            band: s.snc.band().into(),
            metrics: s.last_metrics,
            frames: s.net.counters(),
        })
        .collect();
    let records = tb.log.records();
    StateSnapshot {
        t: tb.now,
        converged: tb.converged,
        gossip_rounds: tb.kira.rounds(),
        nodes,
        links,
        plan,
        manager,
        subnets,
        log_len: records.len(),
        log_tail: records[records.len().saturating_sub(log_tail)..].to_vec(),
        violations: tb.violations.len(),
    }
}
