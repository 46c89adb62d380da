//! Packet-level man-in-the-middle on the vehicle → backend stream.
//!
//! The attacker eavesdrops the target's packets to learn the transmission
//! interval, then substitutes altered packets or replays old ones. It has no
//! access to vehicle keys: altered packets leave unsigned, and replays carry
//! whatever tag was observed.

use serde::{Deserialize, Serialize};

use crate::packets::{LocationPacket, PacketField, VehicleId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Strategy {
    /// Shift the reported position by fixed degree offsets.
    CoordinateOffset { d_lat: f64, d_lon: f64 },
    /// Flip one bit (0 = least significant) of a field's 64-bit encoding.
    BitFlip { field: PacketField, bit: u8 },
    /// Re-send each packet `delay_ms` later with its timestamp advanced by
    /// the same amount.
    Replay { delay_ms: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScenario {
    pub target: VehicleId,
    /// Simulation time (ms since the run started) at which tampering begins.
    pub start_time_ms: i64,
    pub strategy: Strategy,
    /// Active window length; `None` tampers with a single packet.
    #[serde(default)]
    pub duration_ms: Option<i64>,
}

impl AttackScenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self, horizon_ms: i64) -> Result<(), String> {
        if !(0..=horizon_ms).contains(&self.start_time_ms) {
            return Err(format!(
                "scenario start_time_ms {} outside the simulation horizon [0, {horizon_ms}]",
                self.start_time_ms
            ));
        }
        if self.duration_ms.is_some_and(|d| d <= 0) {
            return Err("scenario duration_ms must be positive".into());
        }
        match self.strategy {
            Strategy::CoordinateOffset { d_lat, d_lon } if !(d_lat.is_finite() && d_lon.is_finite()) => {
                Err("scenario offsets must be finite".into())
            }
            Strategy::BitFlip { bit, .. } if bit >= 64 => Err("bit index must be below 64".into()),
            Strategy::Replay { delay_ms } if delay_ms < 0 => Err("replay delay must be >= 0".into()),
            _ => Ok(()),
        }
    }
}

/// Running estimate of the target's transmission interval: the median of
/// observed gaps between consecutive packets.
#[derive(Debug, Clone, Default)]
pub struct IntervalEstimator {
    last_ts: Option<i64>,
    gaps: Vec<i64>,
}

impl IntervalEstimator {
    pub fn observe(&mut self, p: &LocationPacket) -> Option<i64> {
        if let Some(last) = self.last_ts {
            self.gaps.push(p.timestamp_ms - last);
        }
        self.last_ts = Some(p.timestamp_ms);
        self.estimate()
    }

    /// Median gap (mean of the middle pair for even counts); `None` before
    /// two packets were seen.
    pub fn estimate(&self) -> Option<i64> {
        if self.gaps.is_empty() {
            return None;
        }
        let mut g = self.gaps.clone();
        g.sort_unstable();
        let n = g.len();
        Some(if n % 2 == 1 { g[n / 2] } else { (g[n / 2 - 1] + g[n / 2]) / 2 })
    }
}

#[derive(Debug, Clone)]
pub struct Attacker {
    scenario: AttackScenario,
    estimator: IntervalEstimator,
    fired: bool,
    /// (due time, packet), in insertion order.
    pending: Vec<(i64, LocationPacket)>,
}

impl Attacker {
    pub fn new(scenario: AttackScenario) -> Self {
        Self { scenario, estimator: IntervalEstimator::default(), fired: false, pending: Vec::new() }
    }

    pub fn scenario(&self) -> &AttackScenario {
        &self.scenario
    }

    pub fn interval_estimate(&self) -> Option<i64> {
        self.estimator.estimate()
    }

    fn active(&self, now_ms: i64) -> bool {
        if now_ms < self.scenario.start_time_ms {
            return false;
        }
        match self.scenario.duration_ms {
            None => !self.fired,
            Some(d) => now_ms < self.scenario.start_time_ms + d,
        }
    }

    /// Packets forwarded to the backend in place of `p`. Packets of other
    /// vehicles, and target packets outside the active window, pass through
    /// unchanged.
    pub fn intercept(&mut self, p: &LocationPacket, now_ms: i64) -> Vec<LocationPacket> {
        if p.vehicle_id != self.scenario.target {
            return vec![p.clone()];
        }
        self.estimator.observe(p);
        if !self.active(now_ms) {
            return vec![p.clone()];
        }
        self.fired = true;
        match self.scenario.strategy {
            Strategy::CoordinateOffset { d_lat, d_lon } => {
                let mut q = p.clone();
                q.lat += d_lat;
                q.lon += d_lon;
                q.auth_tag = None;
                vec![q]
            }
            Strategy::BitFlip { field, bit } => {
                let mut q = p.with_bit_flipped(field, bit);
                q.auth_tag = None;
                vec![q]
            }
            Strategy::Replay { delay_ms } => {
                let mut copy = p.clone();
                copy.timestamp_ms += delay_ms;
                self.pending.push((now_ms + delay_ms, copy));
                vec![p.clone()]
            }
        }
    }

    /// Queued replays due at or before `now_ms`.
    pub fn release_due(&mut self, now_ms: i64) -> Vec<LocationPacket> {
        let (due, rest): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|(t, _)| *t <= now_ms);
        self.pending = rest;
        due.into_iter().map(|(_, p)| p).collect()
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::packets::{sign, KeyTable};

    fn example(ts: i64) -> LocationPacket {
        LocationPacket::new(10010, GeoPoint::new(1.302, 84.24), 30.0, ts)
    }

    fn scenario(strategy: Strategy, duration_ms: Option<i64>) -> AttackScenario {
        AttackScenario { target: 10010, start_time_ms: 0, strategy, duration_ms }
    }

    #[test]
    fn interval_estimates() {
        let mut e = IntervalEstimator::default();
        assert_eq!(e.observe(&example(0)), None);
        assert_eq!(e.observe(&example(1000)), Some(1000));
        let mut e = IntervalEstimator::default();
        for ts in [0, 1000, 2000, 5000] {
            e.observe(&example(ts));
        }
        assert_eq!(e.estimate(), Some(1000));
    }

    #[test]
    fn example_offset_and_tag_stripped() {
        let keys = KeyTable::generate([10010], 3);
        let signed = sign(&example(0), keys.get(10010).unwrap()).unwrap();
        let mut a = Attacker::new(scenario(Strategy::CoordinateOffset { d_lat: 0.0, d_lon: -4.0 }, None));
        let out = a.intercept(&signed, 0);
        assert_eq!(out.len(), 1);
        assert!((out[0].lon - 80.24).abs() < 1e-9);
        assert_eq!(out[0].lat, 1.302);
        assert_eq!(out[0].auth_tag, None);
        // Single shot: the next packet passes.
        assert_eq!(a.intercept(&example(1000), 1000), vec![example(1000)]);
    }

    #[test]
    fn replay_queues_copy_with_shifted_timestamp() {
        let mut a = Attacker::new(scenario(Strategy::Replay { delay_ms: 5000 }, None));
        let p = example(7_000);
        assert_eq!(a.intercept(&p, 0), vec![p.clone()]);
        assert!(a.release_due(4_999).is_empty());
        let r = a.release_due(5_000);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].timestamp_ms, 12_000);
        assert_eq!(LocationPacket { timestamp_ms: p.timestamp_ms, ..r[0].clone() }, p);
        assert!(!a.has_pending());
    }

    #[test]
    fn inactive_and_non_target_pass_through() {
        let mut s = scenario(Strategy::CoordinateOffset { d_lat: 0.0, d_lon: 1.0 }, Some(1000));
        s.start_time_ms = 10_000;
        let mut a = Attacker::new(s);
        let p = example(0);
        assert_eq!(a.intercept(&p, 0), vec![p.clone()]);
        let other = LocationPacket { vehicle_id: 1, ..p.clone() };
        assert_eq!(a.intercept(&other, 10_000)[0].serialize(), other.serialize());
        assert_ne!(a.intercept(&p, 10_500), vec![p.clone()]);
        assert_eq!(a.intercept(&p, 11_000), vec![p]);
    }

    #[test]
    fn bit_flip_changes_one_bit() {
        let mut a = Attacker::new(scenario(Strategy::BitFlip { field: PacketField::Lon, bit: 40 }, None));
        let out = a.intercept(&example(0), 0);
        assert_eq!((out[0].lon.to_bits() ^ 84.24f64.to_bits()).count_ones(), 1);
    }

    #[test]
    fn scenario_json() {
        let s = AttackScenario::from_json(
            r#"{"target":10010,"start_time_ms":120000,"strategy":{"type":"coordinate_offset","d_lat":0.0,"d_lon":-0.002}}"#,
        )
        .unwrap();
        assert_eq!(s.duration_ms, None);
        assert!(s.validate(600_000).is_ok());
        assert!(s.validate(60_000).is_err());
    }
}
