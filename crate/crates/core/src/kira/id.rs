use std::fmt;

use rand::Rng;
use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

pub const ID_BYTES: usize = 20;
pub const ID_BITS: usize = ID_BYTES * 8;

/// 160-bit node identity in the routing and DHT key space.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub [u8; ID_BYTES]);

/// XOR distance between two ids, ordered as an unsigned big-endian integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Distance(pub [u8; ID_BYTES]);

impl NodeId {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut b = [0u8; ID_BYTES];
        rng.fill(&mut b[..]);
        NodeId(b)
    }

    /// Maps an arbitrary key into the id space: SHA-256, first 160 bits.
    pub fn for_key(key: &[u8]) -> Self {
        let digest = Sha256::digest(key);
        let mut b = [0u8; ID_BYTES];
        b.copy_from_slice(&digest[..ID_BYTES]);
        NodeId(b)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != ID_BYTES * 2 {
            return None;
        }
        let mut b = [0u8; ID_BYTES];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hex = std::str::from_utf8(chunk).ok()?;
            b[i] = u8::from_str_radix(hex, 16).ok()?;
        }
        Some(NodeId(b))
    }

    /// Bit `i` counted from the most significant bit.
    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 8] & (0x80 >> (i % 8)) != 0
    }

    /// Number of leading bits shared with `other`; `ID_BITS` when equal.
    pub fn shared_prefix_len(&self, other: &NodeId) -> usize {
        xor_distance(self, other).leading_zeros()
    }
}

pub fn xor_distance(a: &NodeId, b: &NodeId) -> Distance {
    let mut d = [0u8; ID_BYTES];
    for (i, slot) in d.iter_mut().enumerate() {
        *slot = a.0[i] ^ b.0[i];
    }
    Distance(d)
}

impl Distance {
    pub const ZERO: Distance = Distance([0; ID_BYTES]);

    pub fn leading_zeros(&self) -> usize {
        let mut n = 0;
        for byte in self.0 {
            if byte == 0 {
                n += 8;
            } else {
                return n + byte.leading_zeros() as usize;
            }
        }
        n
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({self})")
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_to_self_is_zero() {
        let a = NodeId::random(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(xor_distance(&a, &a), Distance::ZERO);
        assert_eq!(a.shared_prefix_len(&a), ID_BITS);
    }

    #[test]
    fn top_bit_distance() {
        let mut top = [0u8; ID_BYTES];
        top[0] = 0x80;
        let d = xor_distance(&NodeId(top), &NodeId::default());
        // 2^159 as big-endian bytes
        assert_eq!(d.0, top);
        assert_eq!(d.leading_zeros(), 0);
    }

    #[test]
    fn key_hash_is_truncated_sha256() {
        // sha256("abc") = ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad
        let id = NodeId::for_key(b"abc");
        assert_eq!(id.to_string(), "ba7816bf8f01cfea414140de5dae2223b00361a3");
        assert_eq!(NodeId::from_hex(&id.to_string()), Some(id));
    }

    #[test]
    fn renders_forty_hex_chars() {
        let id = NodeId::random(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(id.to_string().len(), 40);
    }
}
