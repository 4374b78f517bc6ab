use serde::{Deserialize, Serialize};

use crate::dsm::Qos;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    #[serde(alias = "cnc")]
    CncControl,
    #[serde(alias = "sensor")]
    SensorTelemetry,
}

impl ProfileKind {
    pub fn for_qos(qos: Qos) -> Self {
        match qos {
            Qos::Urllc => ProfileKind::CncControl,
            Qos::Embb => ProfileKind::SensorTelemetry,
        }
    }
}

/// Periodic frame source shared by every device of a sub-network. The
/// numbers are synthetic and not tied to any particular hardware.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrafficProfile {
    pub kind: ProfileKind,
    pub frame_bytes: u32,
    pub period_us: u64,
    pub deadline_us: Option<u64>,
}

impl TrafficProfile {
    /// Control loop: 64-byte frames every millisecond, 500 µs deadline.
    pub const CNC: TrafficProfile = TrafficProfile {
        kind: ProfileKind::CncControl,
        frame_bytes: 64,
        period_us: 1000,
        deadline_us: Some(500),
    };

    /// Telemetry: 1250-byte frames every 250 µs (40 Mbit/s per device).
    pub const SENSOR: TrafficProfile = TrafficProfile {
        kind: ProfileKind::SensorTelemetry,
        frame_bytes: 1250,
        period_us: 250,
        deadline_us: None,
    };

    pub fn for_kind(kind: ProfileKind) -> Self {
        match kind {
            ProfileKind::CncControl => Self::CNC,
            ProfileKind::SensorTelemetry => Self::SENSOR,
        }
    }

    /// Offered load of one device in Mbit/s.
    pub fn device_load_mbps(&self) -> f64 {
        f64::from(self.frame_bytes) * 8.0 / self.period_us as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    Controller,
    Actuator,
    Sensor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeviceSpec {
    pub name: String,
    pub role: DeviceRole,
}

/// Token-ring membership of the demo's sub-networks, in ring order.
pub fn default_devices(kind: ProfileKind) -> Vec<DeviceSpec> {
    let spec = |name: &str, role| DeviceSpec {
        name: name.into(),
        role,
    };
    match kind {
        ProfileKind::CncControl => vec![
            spec("controller-proxy", DeviceRole::Controller),
            spec("servo-x", DeviceRole::Actuator),
            spec("servo-y", DeviceRole::Actuator),
            spec("servo-z", DeviceRole::Actuator),
            spec("spindle", DeviceRole::Actuator),
            spec("e-stop", DeviceRole::Sensor),
            spec("end-switch-1", DeviceRole::Sensor),
            spec("end-switch-2", DeviceRole::Sensor),
        ],
        ProfileKind::SensorTelemetry => vec![
            spec("vibration", DeviceRole::Sensor),
            spec("acoustic", DeviceRole::Sensor),
            spec("temperature", DeviceRole::Sensor),
            spec("humidity", DeviceRole::Sensor),
        ],
    }
}
