//! Stable 64-bit content fingerprints.
//!
//! A fingerprint is the first eight bytes (little-endian) of the SHA-256 of
//! the value's compact JSON serialization. JSON documents carry it as a
//! 16-digit hex string so it survives parsers that store numbers as doubles.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    pub fn of<T: Serialize + ?Sized>(value: &T) -> Self {
        let bytes = serde_json::to_vec(value).expect("fingerprinted values serialize");
        let digest = Sha256::digest(&bytes);
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Fingerprint(u64::from_le_bytes(head))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        u64::from_str_radix(text.trim_start_matches("0x"), 16)
            .map(Fingerprint)
            .map_err(|_| de::Error::custom(format!("invalid fingerprint {text:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_hex_round_trip() {
        let a = Fingerprint::of(&[1, 2, 3]);
        assert_eq!(a, Fingerprint::of(&[1, 2, 3]));
        assert_ne!(a, Fingerprint::of(&[1, 2, 4]));
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(text.len(), 18);
        assert_eq!(serde_json::from_str::<Fingerprint>(&text).unwrap(), a);
    }
}
