//! The deterministic kernel that owns every module's state: backbone
//! control plane, spectrum manager, sub-network controllers and their token
//! sub-networks. All work runs from one totally ordered event queue.

mod snapshot;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use snapshot::{
    BandView, LinkView, ManagerView, NodeView, PlanView, SessionView, StateSnapshot, SubnetView,
};

use crate::dsm::{
    AllocationPlan, Bootstrap, SessionStatus, SmConfig, SmOutput, SpectrumBand, SpectrumManager,
    SubnetId, WireMessage, SM_KEY, SM_PORT,
};
use crate::kira::{
    Backbone, ControlMessage, DhtActivity, DhtRecord, DhtValue, KiraConfig, NodeId, RouteOutcome,
};
use crate::sim::rng::substream;
use crate::sim::{
    Attachment, EventLog, EventQueue, LogRecord, NetEvent, NetEventKind, NodeRef, Scenario, Status,
    Target, TopologyGraph, VirtualTime, INTERNAL_RANK_BASE,
};
use crate::subnet::{
    default_devices, SncConfig, SncOutput, SncPhase, SubnetController, SubnetMetrics, TokenSubnet,
    TrafficProfile,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestbedConfig {
    pub kira: KiraConfig,
    pub sm: SmConfig,
    pub snc: SncConfig,
    /// Period of manager and controller timers.
    pub control_tick_ms: u64,
    pub metrics_period_ms: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            kira: KiraConfig::default(),
            sm: SmConfig::default(),
            snc: SncConfig::default(),
            control_tick_ms: 100,
            metrics_period_ms: 1000,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("event at t={at} is before the current time t={now}")]
    InThePast { at: VirtualTime, now: VirtualTime },
}

/// Operator command accepted by the kernel between events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    SubnetPower { subnet: u16, on: bool },
    NodePower { node: u32, on: bool },
    Shutdown,
}

#[derive(Clone, Debug, thiserror::Error, PartialEq, Eq)]
pub enum CommandError {
    #[error("unknown subnet {0}")]
    UnknownSubnet(u16),
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("shutdown is handled by the operator surface, not the kernel")]
    NotAKernelCommand,
}

/// One metrics export row per subnet per collection period.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub t: VirtualTime,
    pub subnet: u16,
    pub width_mhz: u32,
    pub throughput_mbps: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub jitter_us: f64,
    pub miss_ratio: f64,
    pub dropped: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Work {
    Net(NetEvent),
    Deliver(u64),
    Gossip,
    Control,
    Metrics,
}

const RANK_DELIVER: u16 = INTERNAL_RANK_BASE;
const RANK_GOSSIP: u16 = INTERNAL_RANK_BASE + 1;
const RANK_CONTROL: u16 = INTERNAL_RANK_BASE + 2;
const RANK_METRICS: u16 = INTERNAL_RANK_BASE + 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endpoint {
    Manager,
    Controller(SubnetId),
}

#[derive(Clone, Debug)]
struct InFlight {
    sender: Endpoint,
    src: NodeId,
    dst: NodeId,
    /// Every node on the way, starting at the sender's node.
    path: Vec<NodeRef>,
    msg: WireMessage,
}

struct SubnetSlot {
    attachment: Attachment,
    snc: SubnetController,
    net: TokenSubnet,
    powered: bool,
    last_metrics: Option<SubnetMetrics>,
    last_version: u32,
}

struct ManagerSlot {
    sm: SpectrumManager,
    bootstrap: Bootstrap,
}

pub struct Testbed {
    config: TestbedConfig,
    seed: u64,
    duration_ms: VirtualTime,
    topo: TopologyGraph,
    kira: Backbone,
    sm_host: NodeRef,
    manager: Option<ManagerSlot>,
    generation: u64,
    subnets: BTreeMap<SubnetId, SubnetSlot>,
    queue: EventQueue<Work>,
    now: VirtualTime,
    log: EventLog,
    metrics: Vec<MetricsRow>,
    in_flight: BTreeMap<u64, InFlight>,
    next_msg: u64,
    violations: Vec<String>,
    converged: bool,
    last_plan_version: u32,
}

impl Testbed {
    pub fn new(scenario: &Scenario) -> Self {
        Self::with_config(scenario, TestbedConfig::default())
    }

    pub fn with_config(scenario: &Scenario, config: TestbedConfig) -> Self {
        let seed = scenario.seed;
        let topo = scenario.topology.clone();
        let kira = Backbone::new(config.kira.clone(), &topo, substream(seed, "kira"));
        let mut traffic_rng = substream(seed, "subnet");
        let mut subnets = BTreeMap::new();
        for (&id, a) in &scenario.attachments {
            let profile = TrafficProfile::for_kind(a.profile);
            let net = TokenSubnet::new(profile, default_devices(a.profile), &mut traffic_rng, 0);
            let snc = SubnetController::new(a.requirement, config.snc.clone());
            subnets.insert(
                id,
                SubnetSlot {
                    attachment: a.clone(),
                    snc,
                    net,
                    powered: false,
                    last_metrics: None,
                    last_version: 0,
                },
            );
        }
        let mut tb = Self {
            seed,
            duration_ms: scenario.duration_ms,
            topo,
            kira,
            sm_host: scenario.sm_host,
            manager: None,
            generation: 0,
            subnets,
            queue: EventQueue::new(),
            now: 0,
            log: EventLog::default(),
            metrics: Vec::new(),
            in_flight: BTreeMap::new(),
            next_msg: 0,
            violations: Vec::new(),
            converged: false,
            last_plan_version: 0,
            config,
        };
        if tb.topo.is_node_up(tb.sm_host) {
            tb.start_manager();
        }
        // initial power-on is part of the starting state, not a logged event
        let initially_on: Vec<SubnetId> = scenario
            .attachments
            .values()
            .filter(|a| a.initially_on)
            .map(|a| a.subnet)
            .collect();
        for id in initially_on {
            let slot = tb.subnets.get_mut(&id).expect("attachment listed above");
            slot.powered = true;
            if tb.topo.is_node_up(slot.attachment.node) {
                slot.snc.power_on(0);
                slot.net.set_active(true);
            }
        }
        let gossip = tb.config.kira.gossip_period_ms;
        let control = tb.config.control_tick_ms;
        let metrics = tb.config.metrics_period_ms;
        tb.queue.push(gossip, RANK_GOSSIP, 0, Work::Gossip);
        tb.queue.push(control, RANK_CONTROL, 0, Work::Control);
        tb.queue.push(metrics, RANK_METRICS, 0, Work::Metrics);
        for ev in &scenario.events {
            tb.schedule(*ev)
                .expect("scenario events are not in the past at t=0");
        }
        tb
    }

    // ---- accessors ----

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn duration_ms(&self) -> VirtualTime {
        self.duration_ms
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn topology(&self) -> &TopologyGraph {
        &self.topo
    }

    pub fn backbone(&self) -> &Backbone {
        &self.kira
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    pub fn manager(&self) -> Option<&SpectrumManager> {
        self.manager.as_ref().map(|m| &m.sm)
    }

    pub fn sm_host(&self) -> NodeRef {
        self.sm_host
    }

    /// The manager's current plan; empty while no manager runs.
    pub fn plan(&self) -> AllocationPlan {
        self.manager()
            .map(|m| m.plan().clone())
            .unwrap_or_else(AllocationPlan::empty)
    }

    pub fn controller(&self, subnet: SubnetId) -> Option<&SubnetController> {
        self.subnets.get(&subnet).map(|s| &s.snc)
    }

    pub fn token_subnet(&self, subnet: SubnetId) -> Option<&TokenSubnet> {
        self.subnets.get(&subnet).map(|s| &s.net)
    }

    pub fn subnet_ids(&self) -> impl Iterator<Item = SubnetId> + '_ {
        self.subnets.keys().copied()
    }

    /// Width each sub-network is transmitting on, in subnet order.
    pub fn applied_widths(&self) -> Vec<(SubnetId, u32)> {
        self.subnets
            .iter()
            .map(|(&id, s)| (id, s.snc.band().width_mhz()))
            .collect()
    }

    pub fn next_event_time(&self) -> Option<VirtualTime> {
        self.queue.peek_time()
    }

    // ---- scheduling and stepping ----

    pub fn schedule(&mut self, ev: NetEvent) -> Result<(), ScheduleError> {
        if ev.time < self.now {
            return Err(ScheduleError::InThePast {
                at: ev.time,
                now: self.now,
            });
        }
        self.queue.push_net(&ev, Work::Net(ev));
        Ok(())
    }

    /// Validates an operator command and schedules its event one virtual
    /// millisecond after the current time.
    pub fn inject(&mut self, cmd: Command) -> Result<NetEvent, CommandError> {
        let at = self.now + 1;
        let ev = match cmd {
            Command::SubnetPower { subnet, on } => {
                if !self.subnets.contains_key(&SubnetId(subnet)) {
                    return Err(CommandError::UnknownSubnet(subnet));
                }
                NetEvent::subnet_power(at, SubnetId(subnet), on)
            }
            Command::NodePower { node, on } => {
                if !self.topo.contains(NodeRef(node)) {
                    return Err(CommandError::UnknownNode(node));
                }
                NetEvent::node_power(at, NodeRef(node), on)
            }
            Command::Shutdown => return Err(CommandError::NotAKernelCommand),
        };
        self.schedule(ev).expect("now + 1 is never in the past");
        Ok(ev)
    }

    /// Runs the next queued item and returns the log records it produced.
    pub fn step(&mut self) -> Option<Vec<LogRecord>> {
        let (key, work) = self.queue.pop()?;
        let before = self.log.len();
        self.advance_clock(key.time);
        match work {
            Work::Net(ev) => self.on_net_event(ev),
            Work::Deliver(id) => self.on_deliver(id),
            Work::Gossip => {
                self.on_gossip();
                self.queue.push(
                    self.now + self.config.kira.gossip_period_ms,
                    RANK_GOSSIP,
                    0,
                    Work::Gossip,
                );
            }
            Work::Control => {
                self.on_control();
                self.queue.push(
                    self.now + self.config.control_tick_ms,
                    RANK_CONTROL,
                    0,
                    Work::Control,
                );
            }
            Work::Metrics => {
                self.on_metrics();
                self.queue.push(
                    self.now + self.config.metrics_period_ms,
                    RANK_METRICS,
                    0,
                    Work::Metrics,
                );
            }
        }
        self.check_manager_invariants();
        Some(self.log.since(before).to_vec())
    }

    /// Processes everything scheduled at or before `t` and moves the clock
    /// to `t`.
    pub fn run_until(&mut self, t: VirtualTime) -> &EventLog {
        while self.queue.peek_time().is_some_and(|next| next <= t) {
            self.step();
        }
        self.advance_clock(t.max(self.now));
        &self.log
    }

    pub fn run_to_end(&mut self) -> &EventLog {
        self.run_until(self.duration_ms)
    }

    fn advance_clock(&mut self, t: VirtualTime) {
        debug_assert!(t >= self.now, "virtual time never goes backwards");
        self.now = t;
        for s in self.subnets.values_mut() {
            s.net.advance_to(t * 1000);
        }
    }

    fn note(&mut self, module: &'static str, event: impl Into<String>, details: impl Into<String>) {
        self.log.push(self.now, module, event, details);
    }

    fn violation(&mut self, what: String) {
        self.note("kernel", "INVARIANT_VIOLATION", what.clone());
        self.violations.push(what);
    }

    // ---- topology and power events ----

    fn on_net_event(&mut self, ev: NetEvent) {
        self.note("kernel", ev.kind.name(), ev.target.to_string());
        match (ev.kind, ev.target) {
            (NetEventKind::NodeDown, Target::Node(n)) => {
                if !self.topo.is_node_up(n) {
                    return;
                }
                self.topo
                    .set_node_status(n, Status::Down)
                    .expect("scenario nodes exist");
                self.kira.node_down(&self.topo, n);
                self.converged = false;
                if n == self.sm_host {
                    self.manager = None;
                    self.note("dsm", "SM_DOWN", format!("host {n}"));
                }
                for id in self.subnets_at(n) {
                    self.stop_controller(id);
                }
            }
            (NetEventKind::NodeUp, Target::Node(n)) => {
                if self.topo.is_node_up(n) {
                    return;
                }
                self.topo
                    .set_node_status(n, Status::Up)
                    .expect("scenario nodes exist");
                let id = self.kira.node_up(&self.topo, n, self.now);
                self.converged = false;
                self.note("kira", "NODE_ID", format!("{n} {id}"));
                if n == self.sm_host {
                    self.start_manager();
                }
                for id in self.subnets_at(n) {
                    if self.subnets[&id].powered {
                        self.start_controller(id);
                    }
                }
            }
            (NetEventKind::LinkDown, Target::Link(a, b)) => {
                if self.topo.set_link_status(a, b, Status::Down).is_ok() {
                    self.kira.link_down(a, b);
                    self.converged = false;
                }
            }
            (NetEventKind::LinkUp, Target::Link(a, b)) => {
                if self.topo.set_link_status(a, b, Status::Up).is_ok() {
                    self.kira.link_up(&self.topo, a, b, self.now);
                    self.converged = false;
                }
            }
            (NetEventKind::SubnetPowerOff, Target::Subnet(id)) => {
                let Some(slot) = self.subnets.get_mut(&id) else {
                    return;
                };
                if slot.powered {
                    slot.powered = false;
                    self.stop_controller(id);
                }
            }
            (NetEventKind::SubnetPowerOn, Target::Subnet(id)) => {
                let Some(slot) = self.subnets.get_mut(&id) else {
                    return;
                };
                if !slot.powered {
                    slot.powered = true;
                    if self.topo.is_node_up(slot.attachment.node) {
                        self.start_controller(id);
                    }
                }
            }
            _ => unreachable!("events are validated on construction"),
        }
    }

    fn subnets_at(&self, node: NodeRef) -> Vec<SubnetId> {
        self.subnets
            .iter()
            .filter(|(_, s)| s.attachment.node == node)
            .map(|(&id, _)| id)
            .collect()
    }

    fn start_controller(&mut self, id: SubnetId) {
        let now = self.now;
        let slot = self.subnets.get_mut(&id).expect("known subnet");
        slot.net.set_active(true);
        let out = slot.snc.power_on(now);
        self.apply_snc_outputs(id, out);
    }

    fn stop_controller(&mut self, id: SubnetId) {
        let now = self.now;
        let slot = self.subnets.get_mut(&id).expect("known subnet");
        let out = slot.snc.power_off(now);
        slot.net.set_active(false);
        self.apply_snc_outputs(id, out);
    }

    fn start_manager(&mut self) {
        self.generation += 1;
        let sm = SpectrumManager::new(self.config.sm.clone(), self.last_plan_version);
        self.manager = Some(ManagerSlot {
            sm,
            bootstrap: Bootstrap::new(self.generation, self.now),
        });
        if self.now > 0 {
            self.note(
                "dsm",
                "SM_START",
                format!("host {} generation {}", self.sm_host, self.generation),
            );
        }
    }

    // ---- periodic work ----

    fn on_gossip(&mut self) {
        let report = self.kira.gossip_round(&self.topo, self.now);
        if report.malformed > 0 {
            self.note(
                "kira",
                "MALFORMED_GOSSIP",
                format!("{} entries", report.malformed),
            );
        }
        let changed = !report.delta.is_empty();
        if changed {
            self.converged = false;
        } else if !self.converged {
            self.converged = true;
            let contacts: usize = self.kira.nodes().map(|(_, n)| n.table.len()).sum();
            self.note(
                "kira",
                "CONVERGED",
                format!("round {} contacts {contacts}", self.kira.rounds()),
            );
        }
        for activity in self.kira.republish_tick(&self.topo, self.now) {
            match activity {
                DhtActivity::Put {
                    origin,
                    key,
                    result,
                } => {
                    let details = match result {
                        Ok(replicas) => {
                            format!("{key} from {origin} replicas {}", render_ids(&replicas))
                        }
                        Err(e) => format!("{key} from {origin} failed: {e}"),
                    };
                    self.note("kira", "DHT_PUT", details);
                }
                DhtActivity::Expired { node, count } => {
                    self.note("kira", "DHT_EXPIRED", format!("{node} {count}"))
                }
            }
        }
        if let Err(e) = self.kira.check_tables(&self.topo) {
            self.violation(format!("routing table: {e}"));
        }
    }

    fn on_control(&mut self) {
        self.bootstrap_manager();
        if let Some(m) = self.manager.as_mut() {
            let out = m.sm.tick(self.now);
            self.apply_sm_outputs(out);
        }
        let ids: Vec<SubnetId> = self.subnets.keys().copied().collect();
        for id in ids {
            let out = self
                .subnets
                .get_mut(&id)
                .expect("listed above")
                .snc
                .tick(self.now);
            self.apply_snc_outputs(id, out);
        }
    }

    fn bootstrap_manager(&mut self) {
        let now = self.now;
        let Some(m) = self.manager.as_ref() else {
            return;
        };
        if !m.bootstrap.due(now) {
            return;
        }
        let host = self.sm_host;
        let Some(id) = self.kira.id_of(host) else {
            return;
        };
        let record = DhtRecord {
            key: SM_KEY.into(),
            value: DhtValue {
                node: id,
                port: SM_PORT,
            },
            ttl_s: self.config.kira.ttl_s,
            version: m.bootstrap.generation,
        };
        let result = self.kira.dht_put(&self.topo, host, &record, now);
        let m = self.manager.as_mut().expect("checked above");
        let retry = m.bootstrap.on_result(result.is_ok(), now);
        match (result, retry) {
            (Ok(replicas), _) => {
                self.kira.adopt(host, record, now);
                self.note(
                    "kira",
                    "DHT_PUT",
                    format!("{SM_KEY} from {host} replicas {}", render_ids(&replicas)),
                );
            }
            (Err(e), wait) => {
                let wait = wait.unwrap_or_default();
                self.note(
                    "kira",
                    "DHT_PUT",
                    format!("{SM_KEY} from {host} failed: {e}; retry in {wait} ms"),
                );
            }
        }
    }

    fn on_metrics(&mut self) {
        let now = self.now;
        let mut problems = Vec::new();
        for (&id, s) in self.subnets.iter_mut() {
            let m = s.net.collect_metrics();
            self.metrics.push(MetricsRow {
                t: now,
                subnet: id.0,
                width_mhz: s.net.band().width_mhz(),
                throughput_mbps: m.throughput_mbps,
                p50_us: m.latency_p50_us,
                p99_us: m.latency_p99_us,
                jitter_us: m.jitter_us,
                miss_ratio: m.deadline_miss_ratio,
                dropped: m.frames_dropped,
            });
            s.last_metrics = Some(m);
            if let Err(e) = s.net.check_invariants() {
                problems.push(format!("{id}: {e}"));
            }
        }
        for p in problems {
            self.violation(p);
        }
    }

    // ---- messaging ----

    fn apply_sm_outputs(&mut self, out: Vec<SmOutput>) {
        for o in out {
            match o {
                SmOutput::Log { event, details } => self.note("dsm", event, details),
                SmOutput::Send { to, msg, .. } => {
                    self.send(Endpoint::Manager, self.sm_host, to, msg)
                }
            }
        }
    }

    fn apply_snc_outputs(&mut self, id: SubnetId, out: Vec<SncOutput>) {
        let node = self.subnets[&id].attachment.node;
        for o in out {
            match o {
                SncOutput::Log { event, details } => self.note("snc", event, details),
                SncOutput::Apply(band) => {
                    let slot = self.subnets.get_mut(&id).expect("known subnet");
                    slot.net.set_band(band);
                    self.note(
                        "subnet",
                        "BAND",
                        format!("{id} {band} ({}MHz)", band.width_mhz()),
                    );
                }
                SncOutput::Send { to, msg } => self.send(Endpoint::Controller(id), node, to, msg),
                SncOutput::Lookup => {
                    let result = self.kira.dht_get(&self.topo, node, SM_KEY, self.now);
                    let details = match &result {
                        Ok(r) => format!("{SM_KEY} from {node} -> {} v{}", r.value.node, r.version),
                        Err(e) => format!("{SM_KEY} from {node} -> {e}"),
                    };
                    self.note("kira", "DHT_GET", details);
                    let follow = self
                        .subnets
                        .get_mut(&id)
                        .expect("known subnet")
                        .snc
                        .on_lookup(result, self.now);
                    self.apply_snc_outputs(id, follow);
                }
            }
        }
        let slot = self.subnets.get_mut(&id).expect("known subnet");
        let v = slot.snc.version();
        if v < slot.last_version {
            let what = format!(
                "{id}: controller plan version went from {} to {v}",
                slot.last_version
            );
            slot.last_version = v;
            self.violation(what);
        } else {
            slot.last_version = v;
        }
    }

    fn send(&mut self, sender: Endpoint, from: NodeRef, to: NodeId, msg: WireMessage) {
        let Some(src) = self.kira.id_of(from) else {
            return;
        };
        let cm = ControlMessage::app(src, to, self.config.kira.max_hops, msg.encode());
        let dst_name = self
            .kira
            .node_of(&to)
            .map_or_else(|| "?".to_string(), |n| n.to_string());
        match self.kira.route(&self.topo, &cm) {
            RouteOutcome::Delivered { path, .. } => {
                let mut full = Vec::with_capacity(path.len() + 1);
                full.push(from);
                full.extend(path);
                let latency = self
                    .topo
                    .path_latency(&full)
                    .expect("delivered paths use live links");
                self.note(
                    "kira",
                    "ROUTE",
                    format!(
                        "{} {from} {dst_name} hops {} path {}",
                        msg.name(),
                        full.len() - 1,
                        render_path(&full)
                    ),
                );
                let id = self.next_msg;
                self.next_msg += 1;
                self.in_flight.insert(
                    id,
                    InFlight {
                        sender,
                        src,
                        dst: to,
                        path: full,
                        msg,
                    },
                );
                self.queue
                    .push(self.now + latency, RANK_DELIVER, id, Work::Deliver(id));
            }
            RouteOutcome::Dropped { reason, path } => {
                self.note(
                    "kira",
                    "ROUTE_DROPPED",
                    format!(
                        "{} {from} {dst_name} {} after {}",
                        msg.name(),
                        reason.as_str(),
                        path.len()
                    ),
                );
                self.report(sender, msg, false);
            }
        }
    }

    fn on_deliver(&mut self, id: u64) {
        let f = self
            .in_flight
            .remove(&id)
            .expect("every delivery has a message");
        let intact = f.path.iter().all(|&n| self.topo.is_node_up(n))
            && f.path
                .windows(2)
                .all(|w| self.topo.is_link_usable(w[0], w[1]));
        let dest = *f.path.last().expect("paths start at the sender");
        if !intact || self.kira.id_of(dest) != Some(f.dst) {
            self.note(
                "kira",
                "ROUTE_DROPPED",
                format!("{} {} {dest} node-down-mid-path", f.msg.name(), f.path[0]),
            );
            self.report(f.sender, f.msg, false);
            return;
        }
        if f.msg.to_manager() {
            match self.manager.as_mut() {
                Some(m) if dest == self.sm_host => {
                    let out = m.sm.on_message(f.src, f.msg, self.now);
                    self.apply_sm_outputs(out);
                    self.report(f.sender, f.msg, true);
                }
                _ => {
                    self.note("kira", "NO_ENDPOINT", format!("{} at {dest}", f.msg.name()));
                    self.report(f.sender, f.msg, false);
                }
            }
        } else {
            let target = self.subnets_at(dest).into_iter().next();
            match target {
                Some(sid) if self.subnets[&sid].snc.phase() != SncPhase::Off => {
                    let out = self
                        .subnets
                        .get_mut(&sid)
                        .expect("found above")
                        .snc
                        .on_message(f.src, f.msg, self.now);
                    self.apply_snc_outputs(sid, out);
                }
                _ => self.note("kira", "NO_ENDPOINT", format!("{} at {dest}", f.msg.name())),
            }
        }
    }

    /// Transport feedback to the sender; controllers watch their heartbeats.
    fn report(&mut self, sender: Endpoint, msg: WireMessage, delivered: bool) {
        if let (Endpoint::Controller(id), WireMessage::Heartbeat { .. }) = (sender, msg) {
            let now = self.now;
            let out = self
                .subnets
                .get_mut(&id)
                .expect("known subnet")
                .snc
                .on_heartbeat_report(delivered, now);
            self.apply_snc_outputs(id, out);
        }
    }

    // ---- invariants ----

    fn check_manager_invariants(&mut self) {
        let Some(m) = self.manager.as_ref() else {
            return;
        };
        let plan = m.sm.plan();
        if plan.version < self.last_plan_version {
            let what = format!(
                "plan version went from {} to {}",
                self.last_plan_version, plan.version
            );
            self.violation(what);
            return;
        }
        if plan.version == self.last_plan_version {
            return;
        }
        self.last_plan_version = plan.version;
        let mut problems = Vec::new();
        if let Err(e) = validate_plan(plan) {
            problems.push(e);
        }
        for id in plan.assignments.keys() {
            if m.sm.session(*id).map(|s| s.status) != Some(SessionStatus::Live) {
                problems.push(format!(
                    "plan v{} assigns spectrum to non-live {id}",
                    plan.version
                ));
            }
        }
        for p in problems {
            self.violation(p);
        }
    }

    pub fn snapshot(&self, log_tail: usize) -> StateSnapshot {
        snapshot::build(self, log_tail)
    }
}

/// Non-overlap, in-band and total-width checks for a plan.
pub fn validate_plan(plan: &AllocationPlan) -> Result<(), String> {
    let bands: Vec<(SubnetId, SpectrumBand)> =
        plan.assignments.iter().map(|(&s, a)| (s, a.band)).collect();
    for (i, (a, ba)) in bands.iter().enumerate() {
        if ba.low_mhz() < SpectrumBand::FULL.low_mhz()
            || ba.high_mhz() > SpectrumBand::FULL.high_mhz()
        {
            return Err(format!(
                "plan v{}: {a} band {ba} outside the shared band",
                plan.version
            ));
        }
        for (b, bb) in &bands[i + 1..] {
            if ba.overlaps(bb) {
                return Err(format!(
                    "plan v{}: {a} {ba} overlaps {b} {bb}",
                    plan.version
                ));
            }
        }
    }
    if plan.total_mhz() > SpectrumBand::FULL.width_mhz() {
        return Err(format!(
            "plan v{}: {} MHz assigned",
            plan.version,
            plan.total_mhz()
        ));
    }
    Ok(())
}

fn render_ids(ids: &[NodeId]) -> String {
    let short: Vec<String> = ids
        .iter()
        .map(|id| id.to_string()[..8].to_string())
        .collect();
    format!("[{}]", short.join(","))
}

fn render_path(path: &[NodeRef]) -> String {
    let parts: Vec<String> = path.iter().map(|n| n.to_string()).collect();
    parts.join(">")
}
