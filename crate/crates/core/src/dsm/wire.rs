//! Spectrum-management payloads carried inside backbone APP messages.
//!
//! Frame layout: `len: u16 | kind: u8 | body`, where `len` counts the kind
//! byte plus the body. All integers are big-endian; band edges are absolute
//! MHz.

use super::spectrum::{Qos, SpectrumBand, SubnetId};

pub const KIND_REGISTER: u8 = 1;
pub const KIND_GRANT: u8 = 2;
pub const KIND_HEARTBEAT: u8 = 3;
pub const KIND_RECONFIGURE: u8 = 4;
pub const KIND_ACK: u8 = 5;
pub const KIND_DEREGISTER: u8 = 6;
pub const KIND_REREGISTER: u8 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WireMessage {
    Register {
        subnet: SubnetId,
        qos: Qos,
        requested_mhz: u8,
        priority: u8,
    },
    Grant {
        version: u32,
        band: SpectrumBand,
    },
    Heartbeat {
        subnet: SubnetId,
        version: u32,
    },
    Reconfigure {
        version: u32,
        band: SpectrumBand,
    },
    Ack {
        version: u32,
    },
    Deregister {
        subnet: SubnetId,
    },
    /// Reply to a heartbeat the manager cannot place: register again.
    Reregister {
        subnet: SubnetId,
    },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("length field says {declared} bytes but kind {kind} carries {expected}")]
    LengthMismatch {
        kind: u8,
        declared: usize,
        expected: usize,
    },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("invalid qos code {0}")]
    InvalidQos(u8),
    #[error("invalid band [{0}, {1}]")]
    InvalidBand(u16, u16),
}

impl WireMessage {
    pub fn kind(&self) -> u8 {
        match self {
            WireMessage::Register { .. } => KIND_REGISTER,
            WireMessage::Grant { .. } => KIND_GRANT,
            WireMessage::Heartbeat { .. } => KIND_HEARTBEAT,
            WireMessage::Reconfigure { .. } => KIND_RECONFIGURE,
            WireMessage::Ack { .. } => KIND_ACK,
            WireMessage::Deregister { .. } => KIND_DEREGISTER,
            WireMessage::Reregister { .. } => KIND_REREGISTER,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::Register { .. } => "REGISTER",
            WireMessage::Grant { .. } => "GRANT",
            WireMessage::Heartbeat { .. } => "HEARTBEAT",
            WireMessage::Reconfigure { .. } => "RECONFIGURE",
            WireMessage::Ack { .. } => "ACK",
            WireMessage::Deregister { .. } => "DEREGISTER",
            WireMessage::Reregister { .. } => "REREGISTER",
        }
    }

    /// Messages addressed to the manager rather than to a controller.
    pub fn to_manager(&self) -> bool {
        matches!(
            self,
            WireMessage::Register { .. }
                | WireMessage::Heartbeat { .. }
                | WireMessage::Ack { .. }
                | WireMessage::Deregister { .. }
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(8);
        match *self {
            WireMessage::Register {
                subnet,
                qos,
                requested_mhz,
                priority,
            } => {
                body.extend_from_slice(&subnet.0.to_be_bytes());
                body.extend_from_slice(&[qos.code(), requested_mhz, priority]);
            }
            WireMessage::Grant { version, band } | WireMessage::Reconfigure { version, band } => {
                body.extend_from_slice(&version.to_be_bytes());
                put_band(&mut body, band);
            }
            WireMessage::Heartbeat { subnet, version } => {
                body.extend_from_slice(&subnet.0.to_be_bytes());
                body.extend_from_slice(&version.to_be_bytes());
            }
            WireMessage::Ack { version } => body.extend_from_slice(&version.to_be_bytes()),
            WireMessage::Deregister { subnet } | WireMessage::Reregister { subnet } => {
                body.extend_from_slice(&subnet.0.to_be_bytes())
            }
        }
        let mut out = Vec::with_capacity(body.len() + 3);
        out.extend_from_slice(&(body.len() as u16 + 1).to_be_bytes());
        out.push(self.kind());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Self, WireError> {
        if frame.len() < 3 {
            return Err(WireError::Truncated {
                need: 3,
                have: frame.len(),
            });
        }
        let declared = usize::from(u16::from_be_bytes([frame[0], frame[1]]));
        let kind = frame[2];
        let expected = match kind {
            KIND_REGISTER => 5,
            KIND_GRANT | KIND_RECONFIGURE => 8,
            KIND_HEARTBEAT => 6,
            KIND_ACK => 4,
            KIND_DEREGISTER | KIND_REREGISTER => 2,
            other => return Err(WireError::UnknownKind(other)),
        };
        if declared != expected + 1 {
            return Err(WireError::LengthMismatch {
                kind,
                declared,
                expected: expected + 1,
            });
        }
        let body = &frame[3..];
        if body.len() < expected {
            return Err(WireError::Truncated {
                need: expected + 3,
                have: frame.len(),
            });
        }
        let u16_at = |i: usize| u16::from_be_bytes([body[i], body[i + 1]]);
        let u32_at =
            |i: usize| u32::from_be_bytes([body[i], body[i + 1], body[i + 2], body[i + 3]]);
        let band_at = |i: usize| {
            let (low, high) = (u16_at(i), u16_at(i + 2));
            SpectrumBand::new(u32::from(low), u32::from(high))
                .map_err(|_| WireError::InvalidBand(low, high))
        };
        Ok(match kind {
            KIND_REGISTER => WireMessage::Register {
                subnet: SubnetId(u16_at(0)),
                qos: Qos::from_code(body[2]).ok_or(WireError::InvalidQos(body[2]))?,
                requested_mhz: body[3],
                priority: body[4],
            },
            KIND_GRANT => WireMessage::Grant {
                version: u32_at(0),
                band: band_at(4)?,
            },
            KIND_RECONFIGURE => WireMessage::Reconfigure {
                version: u32_at(0),
                band: band_at(4)?,
            },
            KIND_HEARTBEAT => WireMessage::Heartbeat {
                subnet: SubnetId(u16_at(0)),
                version: u32_at(2),
            },
            KIND_ACK => WireMessage::Ack { version: u32_at(0) },
            KIND_DEREGISTER => WireMessage::Deregister {
                subnet: SubnetId(u16_at(0)),
            },
            _ => WireMessage::Reregister {
                subnet: SubnetId(u16_at(0)),
            },
        })
    }
}

fn put_band(out: &mut Vec<u8>, band: SpectrumBand) {
    // band edges are bounded by 3800 MHz
    out.extend_from_slice(&(band.low_mhz() as u16).to_be_bytes());
    out.extend_from_slice(&(band.high_mhz() as u16).to_be_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> Vec<WireMessage> {
        let band = SpectrumBand::new(3740, 3800).unwrap();
        vec![
            WireMessage::Register {
                subnet: SubnetId(2),
                qos: Qos::Embb,
                requested_mhz: 60,
                priority: 1,
            },
            WireMessage::Grant { version: 7, band },
            WireMessage::Heartbeat {
                subnet: SubnetId(1),
                version: 0x0102_0304,
            },
            WireMessage::Reconfigure {
                version: 9,
                band: SpectrumBand::EMPTY,
            },
            WireMessage::Ack { version: 9 },
            WireMessage::Deregister {
                subnet: SubnetId(5),
            },
            WireMessage::Reregister {
                subnet: SubnetId(5),
            },
        ]
    }

    #[test]
    fn round_trips() {
        for m in all() {
            assert_eq!(WireMessage::decode(&m.encode()), Ok(m));
        }
    }

    #[test]
    fn byte_layout_is_big_endian() {
        let m = WireMessage::Grant {
            version: 1,
            band: SpectrumBand::new(3700, 3740).unwrap(),
        };
        // 3700 = 0x0E74, 3740 = 0x0E9C
        assert_eq!(
            m.encode(),
            vec![0, 9, 2, 0, 0, 0, 1, 0x0E, 0x74, 0x0E, 0x9C]
        );
        let hb = WireMessage::Heartbeat {
            subnet: SubnetId(0x0102),
            version: 3,
        };
        assert_eq!(hb.encode(), vec![0, 7, 3, 1, 2, 0, 0, 0, 3]);
    }

    #[test]
    fn rejects_malformed_frames() {
        assert_eq!(
            WireMessage::decode(&[0, 1]),
            Err(WireError::Truncated { need: 3, have: 2 })
        );
        assert_eq!(
            WireMessage::decode(&[0, 1, 42]),
            Err(WireError::UnknownKind(42))
        );
        let mut f = WireMessage::Ack { version: 1 }.encode();
        f.pop();
        assert!(matches!(
            WireMessage::decode(&f),
            Err(WireError::Truncated { .. })
        ));
        f[1] = 9;
        assert!(matches!(
            WireMessage::decode(&f),
            Err(WireError::LengthMismatch { .. })
        ));
        let bad_qos = [0, 6, 1, 0, 1, 9, 40, 0];
        assert_eq!(WireMessage::decode(&bad_qos), Err(WireError::InvalidQos(9)));
        let inverted = [0, 9, 4, 0, 0, 0, 1, 0x0E, 0x9C, 0x0E, 0x74];
        assert_eq!(
            WireMessage::decode(&inverted),
            Err(WireError::InvalidBand(3740, 3700))
        );
    }
}
