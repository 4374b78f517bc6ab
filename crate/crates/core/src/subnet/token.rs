//! Token-passing sub-network emulation.
//!
//! A token circulates over a fixed ring of devices once per rotation. Each
//! rotation carries `capacity × rotation` bytes of airtime, split into one
//! contiguous slot per device (integer byte quanta, remainder to the first
//! devices in ring order). A device transmits only inside its slot; frames
//! are fragmented across slots when they do not fit, and unused airtime is
//! not carried over. Band changes take effect at the next rotation start.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use super::metrics::{SubnetMetrics, Window};
use super::traffic::{DeviceSpec, TrafficProfile};
use crate::dsm::SpectrumBand;

pub const TOKEN_PERIOD_US: u64 = 250;
/// Frames a device may hold before new ones are dropped.
pub const QUEUE_BOUND: usize = 1024;
/// Spectral efficiency in bit/s/Hz.
pub const SPECTRAL_EFFICIENCY: u32 = 4;

const ROTATION_NS: u64 = TOKEN_PERIOD_US * 1000;

/// Linear PHY abstraction: width × η.
pub fn capacity_mbps(band: &SpectrumBand) -> f64 {
    f64::from(band.width_mhz() * SPECTRAL_EFFICIENCY)
}

/// Airtime of one rotation in bytes: width MHz × η bit/µs × period / 8.
pub fn rotation_budget_bytes(band: &SpectrumBand) -> u64 {
    u64::from(band.width_mhz() * SPECTRAL_EFFICIENCY) * TOKEN_PERIOD_US / 8
}

#[derive(Clone, Copy, Debug)]
struct Frame {
    generated_ns: u64,
    remaining: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FrameCounters {
    pub generated: u64,
    pub delivered: u64,
    pub queued: u64,
    pub dropped: u64,
}

impl FrameCounters {
    pub fn conserved(&self) -> bool {
        self.generated == self.delivered + self.queued + self.dropped
    }
}

#[derive(Clone, Debug)]
struct Device {
    spec: DeviceSpec,
    next_gen_ns: u64,
    queue: VecDeque<Frame>,
    generated: u64,
    delivered: u64,
    dropped: u64,
}

impl Device {
    fn counters(&self) -> FrameCounters {
        FrameCounters {
            generated: self.generated,
            delivered: self.delivered,
            queued: self.queue.len() as u64,
            dropped: self.dropped,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TokenSubnet {
    profile: TrafficProfile,
    devices: Vec<Device>,
    band: SpectrumBand,
    pending_band: Option<SpectrumBand>,
    active: bool,
    /// Start of the next rotation, µs.
    now_us: u64,
    rotations: u64,
    /// Rotations that carried more bytes than their airtime budget.
    overruns: u64,
    window: Window,
    window_start_us: u64,
}

impl TokenSubnet {
    /// An inactive sub-network with zero bandwidth at `start_us`. Each
    /// device's generation phase is drawn uniformly within one period.
    pub fn new<R: Rng>(
        profile: TrafficProfile,
        devices: Vec<DeviceSpec>,
        rng: &mut R,
        start_us: u64,
    ) -> Self {
        assert!(
            !devices.is_empty(),
            "a token ring needs at least one device"
        );
        assert!(
            start_us.is_multiple_of(TOKEN_PERIOD_US),
            "rotations start on period boundaries"
        );
        let devices = devices
            .into_iter()
            .map(|spec| Device {
                spec,
                next_gen_ns: (start_us + rng.random_range(0..profile.period_us)) * 1000,
                queue: VecDeque::new(),
                generated: 0,
                delivered: 0,
                dropped: 0,
            })
            .collect();
        Self {
            profile,
            devices,
            band: SpectrumBand::EMPTY,
            pending_band: None,
            active: false,
            now_us: start_us,
            rotations: 0,
            overruns: 0,
            window: Window {
                has_deadline: profile.deadline_us.is_some(),
                ..Window::default()
            },
            window_start_us: start_us,
        }
    }

    pub fn profile(&self) -> &TrafficProfile {
        &self.profile
    }

    pub fn band(&self) -> SpectrumBand {
        self.band
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn rotations(&self) -> u64 {
        self.rotations
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn device_names(&self) -> impl Iterator<Item = &str> {
        self.devices.iter().map(|d| d.spec.name.as_str())
    }

    /// Band to use from the next rotation on.
    pub fn set_band(&mut self, band: SpectrumBand) {
        self.pending_band = Some(band);
    }

    /// Starts or stops traffic. Stopping flushes every queue; flushed frames
    /// count as dropped.
    pub fn set_active(&mut self, active: bool) {
        if active == self.active {
            return;
        }
        self.active = active;
        let now_ns = self.now_us * 1000;
        let period_ns = self.profile.period_us * 1000;
        for d in &mut self.devices {
            if active {
                // resume on the device's original phase grid
                if d.next_gen_ns < now_ns {
                    let behind = (now_ns - d.next_gen_ns).div_ceil(period_ns);
                    d.next_gen_ns += behind * period_ns;
                }
            } else {
                let flushed = d.queue.len() as u64;
                d.queue.clear();
                d.dropped += flushed;
                self.window.dropped += flushed;
            }
        }
    }

    /// Runs whole rotations until the next one would end after `t_us`.
    pub fn advance_to(&mut self, t_us: u64) {
        while self.now_us + TOKEN_PERIOD_US <= t_us {
            self.rotate();
        }
    }

    /// Byte-offset slots `[start, end)` of the current rotation, in ring order.
    pub fn slot_schedule(&self) -> Vec<(u64, u64)> {
        let budget = rotation_budget_bytes(&self.band);
        let n = self.devices.len() as u64;
        let mut pos = 0;
        (0..n)
            .map(|i| {
                let q = budget / n + u64::from(i < budget % n);
                let slot = (pos, pos + q);
                pos += q;
                slot
            })
            .collect()
    }

    fn rotate(&mut self) {
        if let Some(b) = self.pending_band.take() {
            self.band = b;
        }
        let start_ns = self.now_us * 1000;
        let end_ns = start_ns + ROTATION_NS;
        if self.active {
            let budget = rotation_budget_bytes(&self.band);
            if budget > 0 {
                let before = self.window.airtime_bytes;
                for (i, (from, to)) in self.slot_schedule().into_iter().enumerate() {
                    self.serve(i, start_ns, budget, from, to);
                }
                if self.window.airtime_bytes - before > budget {
                    self.overruns += 1;
                }
            }
            for i in 0..self.devices.len() {
                self.generate(i, end_ns - 1);
            }
        }
        self.now_us += TOKEN_PERIOD_US;
        self.rotations += 1;
    }

    /// Frames generated at or before `t_ns` enter the queue.
    fn generate(&mut self, i: usize, t_ns: u64) {
        let period_ns = self.profile.period_us * 1000;
        let bytes = u64::from(self.profile.frame_bytes);
        let d = &mut self.devices[i];
        while d.next_gen_ns <= t_ns {
            d.generated += 1;
            if d.queue.len() >= QUEUE_BOUND {
                d.dropped += 1;
                self.window.dropped += 1;
            } else {
                d.queue.push_back(Frame {
                    generated_ns: d.next_gen_ns,
                    remaining: bytes,
                });
            }
            d.next_gen_ns += period_ns;
        }
    }

    /// Device `i` holds the token over byte offsets `[from, to)`.
    fn serve(&mut self, i: usize, start_ns: u64, budget: u64, from: u64, to: u64) {
        let time_at = |pos: u64| start_ns + pos * ROTATION_NS / budget;
        let deadline_ns = self.profile.deadline_us.map(|d| d * 1000);
        let mut pos = from;
        loop {
            self.generate(i, time_at(pos));
            if pos >= to {
                break;
            }
            let d = &mut self.devices[i];
            let Some(front) = d.queue.front_mut() else {
                // idle until the next frame appears, if that is inside the slot
                let g = d.next_gen_ns;
                if g >= time_at(to) {
                    break;
                }
                pos = pos.max(((g - start_ns) * budget).div_ceil(ROTATION_NS));
                continue;
            };
            let sent = front.remaining.min(to - pos);
            front.remaining -= sent;
            pos += sent;
            self.window.airtime_bytes += sent;
            if front.remaining == 0 {
                let generated_ns = front.generated_ns;
                d.queue.pop_front();
                d.delivered += 1;
                let latency = time_at(pos) - generated_ns;
                self.window.latencies_ns.push(latency);
                if deadline_ns.is_some_and(|dl| latency > dl) {
                    self.window.late += 1;
                }
            }
        }
    }

    /// KPIs since the previous collection.
    pub fn collect_metrics(&mut self) -> SubnetMetrics {
        let window = std::mem::replace(
            &mut self.window,
            Window {
                has_deadline: self.profile.deadline_us.is_some(),
                ..Window::default()
            },
        );
        let span = self.now_us - self.window_start_us;
        self.window_start_us = self.now_us;
        window.summarize(span)
    }

    pub fn counters(&self) -> FrameCounters {
        self.devices
            .iter()
            .map(Device::counters)
            .fold(FrameCounters::default(), |a, c| FrameCounters {
                generated: a.generated + c.generated,
                delivered: a.delivered + c.delivered,
                queued: a.queued + c.queued,
                dropped: a.dropped + c.dropped,
            })
    }

    pub fn device_counters(&self) -> Vec<(String, FrameCounters)> {
        self.devices
            .iter()
            .map(|d| (d.spec.name.clone(), d.counters()))
            .collect()
    }

    /// Conservation per device, disjoint in-rotation token slots and no
    /// rotation over its airtime budget.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.overruns > 0 {
            return Err(format!(
                "{} rotations exceeded their airtime budget",
                self.overruns
            ));
        }
        for d in &self.devices {
            let c = d.counters();
            if !c.conserved() {
                return Err(format!(
                    "{}: frame conservation violated {c:?}",
                    d.spec.name
                ));
            }
        }
        let budget = rotation_budget_bytes(&self.band);
        let mut prev_end = 0;
        for (from, to) in self.slot_schedule() {
            if from < prev_end || to < from || to > budget {
                return Err(format!(
                    "token slots overlap or exceed the rotation: [{from},{to})"
                ));
            }
            prev_end = to;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::subnet::traffic::{default_devices, ProfileKind};

    fn band(width: u32) -> SpectrumBand {
        SpectrumBand::new(3700, 3700 + width).unwrap()
    }

    fn subnet(profile: TrafficProfile, width: u32) -> TokenSubnet {
        let mut s = TokenSubnet::new(
            profile,
            default_devices(profile.kind),
            &mut ChaCha8Rng::seed_from_u64(3),
            0,
        );
        s.set_band(band(width));
        s.set_active(true);
        s
    }

    #[test]
    fn capacity_is_linear() {
        assert_eq!(capacity_mbps(&SpectrumBand::EMPTY), 0.0);
        assert_eq!(capacity_mbps(&band(60)), 240.0);
        assert_eq!(capacity_mbps(&SpectrumBand::FULL), 400.0);
        assert_eq!(rotation_budget_bytes(&band(40)), 5000);
    }

    #[test]
    fn quanta_tile_the_rotation() {
        let mut s = subnet(TrafficProfile::CNC, 1);
        s.advance_to(250);
        // 125 bytes over 8 devices: 16 bytes for the first five, 15 after
        let slots = s.slot_schedule();
        assert_eq!(slots[0], (0, 16));
        assert_eq!(slots[5], (80, 95));
        assert_eq!(slots[7].1, 125);
        s.check_invariants().unwrap();
    }

    #[test]
    fn zero_width_delivers_nothing() {
        let mut s = subnet(TrafficProfile::CNC, 0);
        s.advance_to(2_000_000);
        let m = s.collect_metrics();
        assert_eq!(m.throughput_mbps, 0.0);
        assert_eq!(m.frames_delivered, 0);
        let c = s.counters();
        assert_eq!(c.delivered, 0);
        assert!(c.dropped > 0, "queues overflow after about a second");
        assert_eq!(c.queued, 8 * QUEUE_BOUND as u64);
        assert!(c.conserved());
    }

    #[test]
    fn cnc_meets_its_deadline_on_40_mhz() {
        let mut s = subnet(TrafficProfile::CNC, 40);
        s.advance_to(1_000_000);
        let m = s.collect_metrics();
        assert_eq!(m.deadline_miss_ratio, 0.0);
        assert!(m.latency_p99_us <= 500.0, "{m:?}");
        assert_eq!(m.frames_delivered, 8000 - s.counters().queued);
        // offered 8 × 0.512 Mbit/s
        assert!((m.throughput_mbps - 4.096).abs() < 0.01, "{m:?}");
    }

    #[test]
    fn saturated_sensors_reach_capacity() {
        let heavy = TrafficProfile {
            frame_bytes: 1500,
            period_us: 100,
            ..TrafficProfile::SENSOR
        };
        let mut s = subnet(heavy, 60);
        s.advance_to(100_000);
        s.collect_metrics();
        s.advance_to(1_100_000);
        let m = s.collect_metrics();
        assert!((m.throughput_mbps - 240.0).abs() <= 2.4, "{m:?}");
        assert!(m.frames_dropped > 0);
        assert!(s.counters().conserved());
    }

    #[test]
    fn throughput_never_exceeds_capacity() {
        let heavy = TrafficProfile {
            frame_bytes: 999,
            period_us: 50,
            ..TrafficProfile::SENSOR
        };
        let mut s = subnet(heavy, 37);
        for step in 1..=40 {
            s.advance_to(step * 2500);
            let m = s.collect_metrics();
            assert!(
                m.throughput_mbps <= capacity_mbps(&band(37)) + 1e-9,
                "{m:?}"
            );
        }
    }

    #[test]
    fn band_change_applies_at_rotation_start() {
        let mut s = subnet(TrafficProfile::SENSOR, 60);
        s.advance_to(1000);
        s.set_band(band(100));
        assert_eq!(s.band(), band(60));
        s.advance_to(1250);
        assert_eq!(s.band(), band(100));
        assert_eq!(s.rotations(), 5);
    }

    #[test]
    fn stopping_flushes_queues_as_drops() {
        let mut s = subnet(TrafficProfile::CNC, 0);
        s.advance_to(10_000);
        let queued = s.counters().queued;
        assert!(queued > 0);
        s.set_active(false);
        let c = s.counters();
        assert_eq!((c.queued, c.dropped), (0, queued));
        s.advance_to(20_000);
        assert_eq!(
            s.counters().generated,
            c.generated,
            "no traffic while stopped"
        );
        s.set_active(true);
        s.advance_to(30_000);
        assert!(s.counters().generated > c.generated);
        assert!(s.counters().conserved());
    }

    #[test]
    fn sensor_ring_has_four_devices() {
        let s = subnet(TrafficProfile::for_kind(ProfileKind::SensorTelemetry), 60);
        assert_eq!(s.device_names().count(), 4);
    }
}
