//! Location packets, their wire layout and HMAC-SHA-512 authentication.
//!
//! Wire layout, big-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | vehicle id, u64                         |
//! | 8      | 8    | latitude, IEEE-754 f64                  |
//! | 16     | 8    | longitude, f64                          |
//! | 24     | 8    | bearing, f64, degrees in [0, 360)       |
//! | 32     | 8    | timestamp, i64 ms since the Unix epoch  |
//! | 40     | 1    | flags; bit 0 set when a tag follows     |
//! | 41     | 64   | HMAC-SHA-512 tag (only if bit 0 is set) |
//!
//! The MAC covers bytes 0..40.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, Mac};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha512;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::geo::GeoPoint;

pub type VehicleId = u64;

pub const FIELDS_LEN: usize = 40;
pub const TAG_LEN: usize = 64;
pub const KEY_LEN: usize = 32;
pub const UNSIGNED_LEN: usize = FIELDS_LEN + 1;
pub const SIGNED_LEN: usize = UNSIGNED_LEN + TAG_LEN;

/// Ceilings on serialized size.
pub const MAX_UNSIGNED_BYTES: usize = 120;
pub const MAX_SIGNED_BYTES: usize = 250;
pub const MAX_FRAME_BYTES: usize = 350;

const FLAG_TAGGED: u8 = 0x01;

type HmacSha512 = Hmac<Sha512>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("field out of range: {0}")]
    OutOfRange(&'static str),
    #[error("bad packet length {0}")]
    Length(usize),
    #[error("unknown flag bits {0:#04x}")]
    Flags(u8),
    #[error("auth tag must be {TAG_LEN} bytes, got {0}")]
    TagLength(usize),
    #[error("packet is not signed")]
    Unsigned,
    #[error("packet already carries a tag")]
    AlreadySigned,
    #[error("key for vehicle {key} used with packet of vehicle {packet}")]
    KeyMismatch { key: VehicleId, packet: VehicleId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPacket {
    pub vehicle_id: VehicleId,
    pub lat: f64,
    pub lon: f64,
    pub bearing: f64,
    pub timestamp_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "hex_tag")]
    pub auth_tag: Option<Vec<u8>>,
}

/// Fields addressable by bit-level tampering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketField {
    VehicleId,
    Lat,
    Lon,
    Bearing,
    Timestamp,
}

impl PacketField {
    pub fn offset(self) -> usize {
        match self {
            PacketField::VehicleId => 0,
            PacketField::Lat => 8,
            PacketField::Lon => 16,
            PacketField::Bearing => 24,
            PacketField::Timestamp => 32,
        }
    }
}

impl LocationPacket {
    pub fn new(vehicle_id: VehicleId, loc: GeoPoint, bearing: f64, timestamp_ms: i64) -> Self {
        Self {
            vehicle_id,
            lat: loc.lat,
            lon: loc.lon,
            bearing,
            timestamp_ms,
            auth_tag: None,
        }
    }

    pub fn location(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    pub fn validate(&self) -> Result<(), PacketError> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(PacketError::OutOfRange("lat"));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(PacketError::OutOfRange("lon"));
        }
        if !(self.bearing.is_finite() && (0.0..360.0).contains(&self.bearing)) {
            return Err(PacketError::OutOfRange("bearing"));
        }
        if let Some(tag) = &self.auth_tag {
            if tag.len() != TAG_LEN {
                return Err(PacketError::TagLength(tag.len()));
            }
        }
        Ok(())
    }

    /// The 40 authenticated bytes. Does not validate.
    pub fn field_bytes(&self) -> [u8; FIELDS_LEN] {
        let mut out = [0u8; FIELDS_LEN];
        out[0..8].copy_from_slice(&self.vehicle_id.to_be_bytes());
        out[8..16].copy_from_slice(&self.lat.to_be_bytes());
        out[16..24].copy_from_slice(&self.lon.to_be_bytes());
        out[24..32].copy_from_slice(&self.bearing.to_be_bytes());
        out[32..40].copy_from_slice(&self.timestamp_ms.to_be_bytes());
        out
    }

    fn from_field_bytes(b: &[u8; FIELDS_LEN]) -> Self {
        let u = |o: usize| u64::from_be_bytes(b[o..o + 8].try_into().unwrap());
        Self {
            vehicle_id: u(0),
            lat: f64::from_bits(u(8)),
            lon: f64::from_bits(u(16)),
            bearing: f64::from_bits(u(24)),
            timestamp_ms: u(32) as i64,
            auth_tag: None,
        }
    }

    /// Flips one bit of a field's 64-bit big-endian representation; bit 0 is
    /// the least significant. The result may be out of range.
    pub fn with_bit_flipped(&self, field: PacketField, bit: u8) -> Self {
        let mut bytes = self.field_bytes();
        let o = field.offset();
        let mut word = u64::from_be_bytes(bytes[o..o + 8].try_into().unwrap());
        word ^= 1u64 << (bit % 64);
        bytes[o..o + 8].copy_from_slice(&word.to_be_bytes());
        let mut p = Self::from_field_bytes(&bytes);
        p.auth_tag = self.auth_tag.clone();
        p
    }

    pub fn serialize(&self) -> Result<Vec<u8>, PacketError> {
        self.validate()?;
        let mut out = Vec::with_capacity(SIGNED_LEN);
        out.extend_from_slice(&self.field_bytes());
        match &self.auth_tag {
            Some(tag) => {
                out.push(FLAG_TAGGED);
                out.extend_from_slice(tag);
            }
            None => out.push(0),
        }
        Ok(out)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, PacketError> {
        if bytes.len() < UNSIGNED_LEN {
            return Err(PacketError::Length(bytes.len()));
        }
        let flags = bytes[FIELDS_LEN];
        if flags & !FLAG_TAGGED != 0 {
            return Err(PacketError::Flags(flags));
        }
        let expected = if flags & FLAG_TAGGED != 0 { SIGNED_LEN } else { UNSIGNED_LEN };
        if bytes.len() != expected {
            return Err(PacketError::Length(bytes.len()));
        }
        let mut p = Self::from_field_bytes(bytes[..FIELDS_LEN].try_into().unwrap());
        if flags & FLAG_TAGGED != 0 {
            p.auth_tag = Some(bytes[UNSIGNED_LEN..].to_vec());
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("packet serializes")
    }
}

/// A vehicle's secret. `Debug` never prints the key material.
#[derive(Clone, PartialEq, Eq)]
pub struct VehicleKey {
    pub vehicle_id: VehicleId,
    key: [u8; KEY_LEN],
}

impl VehicleKey {
    pub fn new(vehicle_id: VehicleId, key: [u8; KEY_LEN]) -> Self {
        Self { vehicle_id, key }
    }

    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.key
    }

    fn mac(&self, fields: &[u8]) -> HmacSha512 {
        let mut mac = HmacSha512::new_from_slice(&self.key).expect("hmac takes any key length");
        mac.update(fields);
        mac
    }
}

impl fmt::Debug for VehicleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VehicleKey")
            .field("vehicle_id", &self.vehicle_id)
            .field("key", &"<redacted>")
            .finish()
    }
}

/// Returns `p` carrying an HMAC-SHA-512 tag over its fields.
pub fn sign(p: &LocationPacket, k: &VehicleKey) -> Result<LocationPacket, PacketError> {
    if p.auth_tag.is_some() {
        return Err(PacketError::AlreadySigned);
    }
    check_key(p, k)?;
    let tag = k.mac(&p.field_bytes()).finalize().into_bytes();
    let mut signed = p.clone();
    signed.auth_tag = Some(tag.to_vec());
    Ok(signed)
}

/// Recomputes the tag and compares in constant time. A missing or
/// wrong-length tag is an error, not a failed verification.
pub fn verify(p: &LocationPacket, k: &VehicleKey) -> Result<bool, PacketError> {
    let tag = p.auth_tag.as_ref().ok_or(PacketError::Unsigned)?;
    if tag.len() != TAG_LEN {
        return Err(PacketError::TagLength(tag.len()));
    }
    check_key(p, k)?;
    let expected = k.mac(&p.field_bytes()).finalize().into_bytes();
    Ok(expected.as_slice().ct_eq(tag).into())
}

fn check_key(p: &LocationPacket, k: &VehicleKey) -> Result<(), PacketError> {
    if k.vehicle_id != p.vehicle_id {
        return Err(PacketError::KeyMismatch { key: k.vehicle_id, packet: p.vehicle_id });
    }
    Ok(())
}

/// The backend's vehicle → key table. Read-only after construction.
#[derive(Debug, Clone, Default)]
pub struct KeyTable {
    keys: BTreeMap<VehicleId, VehicleKey>,
}

impl KeyTable {
    /// One key per vehicle from a ChaCha20 stream seeded with `seed`.
    pub fn generate(vehicles: impl IntoIterator<Item = VehicleId>, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut keys = BTreeMap::new();
        for id in vehicles {
            let mut key = [0u8; KEY_LEN];
            rng.fill_bytes(&mut key);
            keys.insert(id, VehicleKey::new(id, key));
        }
        Self { keys }
    }

    pub fn insert(&mut self, key: VehicleKey) {
        self.keys.insert(key.vehicle_id, key);
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleKey> {
        self.keys.get(&id)
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.keys.contains_key(&id)
    }

    pub fn vehicles(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.keys.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

mod hex_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tag: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match tag {
            Some(t) => s.serialize_str(&t.iter().map(|b| format!("{b:02x}")).collect::<String>()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let Some(text) = Option::<String>::deserialize(d)? else {
            return Ok(None);
        };
        if text.len() % 2 != 0 {
            return Err(D::Error::custom("odd-length hex"));
        }
        (0..text.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&text[i..i + 2], 16).map_err(D::Error::custom))
            .collect::<Result<Vec<u8>, _>>()
            .map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// 2024-05-09 11:05:24 UTC.
    const EXAMPLE_TS: i64 = 1_715_252_724_000;

    fn example() -> LocationPacket {
        LocationPacket::new(10010, GeoPoint::new(1.302, 84.24), 30.0, EXAMPLE_TS)
    }

    fn keys() -> KeyTable {
        KeyTable::generate([10010, 10011], 7)
    }

    #[test]
    fn example_packet_round_trips() {
        let p = example();
        let bytes = p.serialize().unwrap();
        assert_eq!(bytes.len(), UNSIGNED_LEN);
        assert_eq!(LocationPacket::deserialize(&bytes).unwrap(), p);
    }

    #[test]
    fn layout_is_big_endian() {
        let bytes = example().serialize().unwrap();
        assert_eq!(&bytes[0..8], &10010u64.to_be_bytes());
        assert_eq!(&bytes[8..16], &1.302f64.to_be_bytes());
        assert_eq!(&bytes[16..24], &84.24f64.to_be_bytes());
        assert_eq!(&bytes[24..32], &30.0f64.to_be_bytes());
        assert_eq!(&bytes[32..40], &EXAMPLE_TS.to_be_bytes());
        assert_eq!(bytes[40], 0);
    }

    #[test]
    fn signed_size_within_bounds() {
        let k = keys();
        let s = sign(&example(), k.get(10010).unwrap()).unwrap();
        let n = s.serialize().unwrap().len();
        assert!(n > UNSIGNED_LEN && n <= MAX_SIGNED_BYTES);
        assert_eq!(n, SIGNED_LEN);
    }

    #[test]
    fn sign_verify_pairs() {
        let k = keys();
        let ka = k.get(10010).unwrap();
        let s = sign(&example(), ka).unwrap();
        assert_eq!(verify(&s, ka), Ok(true));

        let mut tampered = s.clone();
        tampered.lon = f64::from_bits(tampered.lon.to_bits() ^ 1);
        assert_eq!(verify(&tampered, ka), Ok(false));

        let other = VehicleKey::new(10010, [9u8; KEY_LEN]);
        assert_eq!(verify(&s, &other), Ok(false));
    }

    #[test]
    fn verify_errors_are_distinct_from_false() {
        let k = keys();
        let ka = k.get(10010).unwrap();
        assert_eq!(verify(&example(), ka), Err(PacketError::Unsigned));
        let mut s = sign(&example(), ka).unwrap();
        s.auth_tag.as_mut().unwrap().truncate(63);
        assert_eq!(verify(&s, ka), Err(PacketError::TagLength(63)));
    }

    #[test]
    fn key_mismatch_rejected() {
        let k = keys();
        assert!(matches!(
            sign(&example(), k.get(10011).unwrap()),
            Err(PacketError::KeyMismatch { .. })
        ));
    }

    #[test]
    fn out_of_range_fields_rejected() {
        let mut p = example();
        p.bearing = 360.0;
        assert_eq!(p.serialize(), Err(PacketError::OutOfRange("bearing")));
        let mut p = example();
        p.lat = f64::NAN;
        assert_eq!(p.serialize(), Err(PacketError::OutOfRange("lat")));
    }

    #[test]
    fn bad_frames_rejected() {
        let mut bytes = example().serialize().unwrap();
        bytes[40] = 0x02;
        assert_eq!(LocationPacket::deserialize(&bytes), Err(PacketError::Flags(2)));
        bytes[40] = 0x01;
        assert_eq!(LocationPacket::deserialize(&bytes), Err(PacketError::Length(41)));
    }

    #[test]
    fn key_debug_is_redacted() {
        let k = keys();
        let text = format!("{:?}", k.get(10010).unwrap());
        assert!(text.contains("redacted"));
        let hex: String = k.get(10010).unwrap().bytes().iter().map(|b| format!("{b:02x}")).collect();
        assert!(!text.contains(&hex[..8]));
    }

    #[test]
    fn json_rendering_round_trips() {
        let k = keys();
        let s = sign(&example(), k.get(10010).unwrap()).unwrap();
        let back: LocationPacket = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    pub(crate) fn arb_packet() -> impl Strategy<Value = LocationPacket> {
        (
            any::<u64>(),
            -90.0f64..=90.0,
            -180.0f64..=180.0,
            0.0f64..360.0,
            any::<i64>(),
        )
            .prop_map(|(id, lat, lon, bearing, ts)| {
                LocationPacket::new(id, GeoPoint::new(lat, lon), bearing, ts)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn round_trip_and_size(p in arb_packet(), key in any::<[u8; 32]>()) {
            let bytes = p.serialize().unwrap();
            prop_assert!(bytes.len() <= MAX_UNSIGNED_BYTES);
            prop_assert_eq!(LocationPacket::deserialize(&bytes).unwrap(), p.clone());

            let s = sign(&p, &VehicleKey::new(p.vehicle_id, key)).unwrap();
            let sbytes = s.serialize().unwrap();
            prop_assert!(sbytes.len() <= MAX_SIGNED_BYTES && sbytes.len() <= MAX_FRAME_BYTES);
            prop_assert_eq!(LocationPacket::deserialize(&sbytes).unwrap(), s);
        }

        #[test]
        fn any_bit_flip_breaks_verification(p in arb_packet(), key in any::<[u8; 32]>(), bit in 0usize..SIGNED_LEN * 8) {
            let k = VehicleKey::new(p.vehicle_id, key);
            let mut bytes = sign(&p, &k).unwrap().serialize().unwrap();
            bytes[bit / 8] ^= 1 << (bit % 8);
            let accepted = match LocationPacket::deserialize(&bytes) {
                Err(_) => false,
                Ok(q) => {
                    let k = VehicleKey::new(q.vehicle_id, key);
                    verify(&q, &k).unwrap_or(false)
                }
            };
            prop_assert!(!accepted);
        }
    }
}
