//! Online attack detection and prevention at the backend.
//!
//! Each received packet is validated against the vehicle's previous
//! validated fix through the road graph. The distance travelled `d` is
//! compared with the furthest the vehicle could legally have driven,
//! `E = d / max_dist`; `E > 1`, an unmatchable position, a non-increasing
//! timestamp or a failed HMAC during an authentication window all flag the
//! packet. A flag alerts the vehicle and demands `t_auth` authenticated
//! transmissions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_m, GeoPoint};
use crate::packets::{verify, KeyTable, LocationPacket, PacketError, VehicleId};
use crate::roadmap::{RoadGraph, RoadId};

/// Junction-based cases only match a junction this close to the fix.
pub const JUNCTION_RADIUS_M: f64 = 30.0;

pub const DEFAULT_T_AUTH: u32 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("malformed packet: {0}")]
    Malformed(#[from] PacketError),
}

/// Where the backend believes a vehicle is: on a road, or in a junction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoadMatch {
    Road(RoadId),
    AtJunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CheckCase {
    SameRoad,
    AdjacentRoads,
    FromJunction,
    ToJunction,
    Invalid,
}

impl CheckCase {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckCase::SameRoad => "SameRoad",
            CheckCase::AdjacentRoads => "AdjacentRoads",
            CheckCase::FromJunction => "FromJunction",
            CheckCase::ToJunction => "ToJunction",
            CheckCase::Invalid => "Invalid",
        }
    }
}

impl fmt::Display for CheckCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Valid(f64),
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckPosResult {
    pub verdict: Verdict,
    pub matched_road: RoadMatch,
    pub case_used: CheckCase,
    /// Roads whose speed limits bound the transition.
    pub involved: Vec<RoadId>,
}

impl CheckPosResult {
    fn invalid() -> Self {
        Self {
            verdict: Verdict::Invalid,
            matched_road: RoadMatch::AtJunction,
            case_used: CheckCase::Invalid,
            involved: Vec::new(),
        }
    }

    fn valid(d: f64, matched_road: RoadMatch, case_used: CheckCase, involved: Vec<RoadId>) -> Self {
        Self { verdict: Verdict::Valid(d), matched_road, case_used, involved }
    }

    pub fn distance(&self) -> Option<f64> {
        match self.verdict {
            Verdict::Valid(d) => Some(d),
            Verdict::Invalid => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub prv: GeoPoint,
    pub r_prv: RoadMatch,
    pub t_prv: i64,
    pub auth_remaining: u32,
}

/// The road whose nearest sample is closest to `p`, among candidate roads.
/// Ties go to the lowest road id.
pub fn best_road_match(graph: &RoadGraph, p: GeoPoint) -> Option<(RoadId, usize, f64)> {
    let mut best: Option<(RoadId, usize, f64)> = None;
    for r in graph.candidate_roads(p) {
        let (k, d) = graph.nearest_sample(r, p);
        if best.is_none_or(|(_, _, bd)| d < bd) {
            best = Some((r, k, d));
        }
    }
    best
}

/// Validates `cur` against the previous fix held in `state`.
pub fn check_pos(graph: &RoadGraph, state: &VehicleState, cur: GeoPoint) -> CheckPosResult {
    let sample = |r: RoadId, k: usize| graph.road(r).samples[k].loc;

    match (best_road_match(graph, cur), state.r_prv) {
        (Some((r_cur, k1, _)), RoadMatch::Road(r_prv)) => {
            let m1 = sample(r_cur, k1);
            let (k2, _) = graph.nearest_sample(r_prv, state.prv);
            let m2 = sample(r_prv, k2);
            if r_cur == r_prv {
                return CheckPosResult::valid(
                    haversine_m(m1, m2),
                    RoadMatch::Road(r_cur),
                    CheckCase::SameRoad,
                    vec![r_cur],
                );
            }
            match graph
                .junction_between(r_cur, r_prv)
                .or_else(|| graph.junction_between(r_prv, r_cur))
            {
                Some(j) => {
                    let jl = graph.junction(j).loc;
                    CheckPosResult::valid(
                        haversine_m(m2, jl) + haversine_m(m1, jl),
                        RoadMatch::Road(r_cur),
                        CheckCase::AdjacentRoads,
                        vec![r_prv, r_cur],
                    )
                }
                None => CheckPosResult::invalid(),
            }
        }
        (Some((r_cur, k1, _)), RoadMatch::AtJunction) => {
            match graph.nearest_junction_of_road(r_cur, state.prv, JUNCTION_RADIUS_M) {
                Some((jn, _)) => CheckPosResult::valid(
                    haversine_m(sample(r_cur, k1), graph.junction(jn).loc),
                    RoadMatch::Road(r_cur),
                    CheckCase::FromJunction,
                    vec![r_cur],
                ),
                None => CheckPosResult::invalid(),
            }
        }
        (None, RoadMatch::Road(r_prv)) => {
            let (k, _) = graph.nearest_sample(r_prv, state.prv);
            match graph.nearest_junction_of_road(r_prv, cur, JUNCTION_RADIUS_M) {
                Some((jn, _)) => CheckPosResult::valid(
                    haversine_m(sample(r_prv, k), graph.junction(jn).loc),
                    RoadMatch::AtJunction,
                    CheckCase::ToJunction,
                    vec![r_prv],
                ),
                None => CheckPosResult::invalid(),
            }
        }
        (None, RoadMatch::AtJunction) => {
            // Two junction-only fixes are accepted only around one junction.
            let at_prv = graph.nearest_junction(state.prv, JUNCTION_RADIUS_M);
            let at_cur = graph.nearest_junction(cur, JUNCTION_RADIUS_M);
            match (at_prv, at_cur) {
                (Some((a, _)), Some((b, _))) if a == b => CheckPosResult::valid(
                    haversine_m(state.prv, cur),
                    RoadMatch::AtJunction,
                    CheckCase::ToJunction,
                    graph.roads_at(a).to_vec(),
                ),
                _ => CheckPosResult::invalid(),
            }
        }
    }
}

/// Largest legal travel distance between two fixes `dt_s` seconds apart:
/// the fastest involved road's limit times `dt_s`. `None` for an invalid
/// verdict.
pub fn max_dist(graph: &RoadGraph, result: &CheckPosResult, dt_s: f64) -> Option<f64> {
    if matches!(result.verdict, Verdict::Invalid) {
        return None;
    }
    let sp = result
        .involved
        .iter()
        .map(|&r| graph.road(r).sp)
        .fold(f64::NEG_INFINITY, f64::max);
    (sp.is_finite()).then_some(sp * dt_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    EExceeds,
    InvalidLocation,
    Replay,
    AuthFailure,
}

impl FlagReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagReason::EExceeds => "e_exceeds",
            FlagReason::InvalidLocation => "invalid_location",
            FlagReason::Replay => "replay",
            FlagReason::AuthFailure => "auth_failure",
        }
    }
}

/// Message from the backend to a vehicle demanding authenticated packets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub vehicle_id: VehicleId,
    pub timestamp_ms: i64,
    pub t_auth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub vehicle_id: VehicleId,
    pub timestamp_ms: i64,
    /// `None` when the packet seeded the state or was rejected before the
    /// position check.
    pub case_used: Option<CheckCase>,
    pub seeded: bool,
    pub d: Option<f64>,
    pub max_dist: Option<f64>,
    /// `None` when the position was invalid or not checked.
    pub e_value: Option<f64>,
    pub flagged: bool,
    pub reason: Option<FlagReason>,
    /// Authenticated packets still owed after this one.
    pub auth_remaining: u32,
    pub alert: Option<Alert>,
}

impl DetectionOutcome {
    fn new(p: &LocationPacket) -> Self {
        Self {
            vehicle_id: p.vehicle_id,
            timestamp_ms: p.timestamp_ms,
            case_used: None,
            seeded: false,
            d: None,
            max_dist: None,
            e_value: None,
            flagged: false,
            reason: None,
            auth_remaining: 0,
            alert: None,
        }
    }

    pub fn to_record(&self, attacked: bool) -> OutcomeRecord {
        OutcomeRecord {
            vehicle_id: self.vehicle_id,
            timestamp: self.timestamp_ms,
            case_used: match (self.seeded, self.case_used) {
                (true, _) => "Seed".to_string(),
                (false, Some(c)) => c.as_str().to_string(),
                (false, None) => "Unchecked".to_string(),
            },
            d: self.d,
            max_dist: self.max_dist,
            e_value: self.e_value,
            flagged: self.flagged,
            reason: self.reason.map(|r| r.as_str().to_string()).unwrap_or_default(),
            auth_remaining: self.auth_remaining,
            attacked,
        }
    }
}

/// One row of the outcome stream (CSV and JSON lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub vehicle_id: VehicleId,
    pub timestamp: i64,
    pub case_used: String,
    pub d: Option<f64>,
    pub max_dist: Option<f64>,
    pub e_value: Option<f64>,
    pub flagged: bool,
    pub reason: String,
    pub auth_remaining: u32,
    /// Whether the packet was produced or altered by an attacker. Ground
    /// truth from the simulator; the detector never sees it.
    pub attacked: bool,
}

/// Flags the vehicle: (re)opens its authentication window and returns the
/// alert to transmit.
pub fn attack_prevent(state: &mut VehicleState, vehicle_id: VehicleId, timestamp_ms: i64, t_auth: u32) -> Alert {
    state.auth_remaining = t_auth;
    Alert { vehicle_id, timestamp_ms, t_auth }
}

/// Backend detector with a per-vehicle state table.
///
/// Packets of one vehicle are serialized by that vehicle's lock; different
/// vehicles may be processed from different threads.
#[derive(Debug)]
pub struct Detector {
    graph: Arc<RoadGraph>,
    keys: Arc<KeyTable>,
    t_auth: u32,
    states: BTreeMap<VehicleId, Mutex<Option<VehicleState>>>,
}

impl Detector {
    pub fn new(graph: Arc<RoadGraph>, keys: Arc<KeyTable>, t_auth: u32) -> Self {
        let states = keys.vehicles().map(|v| (v, Mutex::new(None))).collect();
        Self { graph, keys, t_auth, states }
    }

    pub fn graph(&self) -> &RoadGraph {
        &self.graph
    }

    pub fn t_auth(&self) -> u32 {
        self.t_auth
    }

    pub fn state(&self, vehicle_id: VehicleId) -> Option<VehicleState> {
        self.states.get(&vehicle_id)?.lock().unwrap().clone()
    }

    /// Authenticated packets the vehicle still owes; 0 when unknown.
    pub fn auth_remaining(&self, vehicle_id: VehicleId) -> u32 {
        self.state(vehicle_id).map_or(0, |s| s.auth_remaining)
    }

    /// Installs a known starting state for a vehicle, e.g. parked at a
    /// station.
    pub fn seed_state(&self, vehicle_id: VehicleId, state: VehicleState) -> Result<(), DetectError> {
        let slot = self.states.get(&vehicle_id).ok_or(DetectError::UnknownVehicle(vehicle_id))?;
        *slot.lock().unwrap() = Some(state);
        Ok(())
    }

    pub fn process_bytes(&self, bytes: &[u8]) -> Result<DetectionOutcome, DetectError> {
        self.process_packet(&LocationPacket::deserialize(bytes)?)
    }

    pub fn process_packet(&self, p: &LocationPacket) -> Result<DetectionOutcome, DetectError> {
        let slot = self
            .states
            .get(&p.vehicle_id)
            .ok_or(DetectError::UnknownVehicle(p.vehicle_id))?;
        p.validate()?;
        let mut guard = slot.lock().unwrap();
        let mut out = DetectionOutcome::new(p);
        let cur = p.location();

        let Some(state) = guard.as_mut() else {
            let r_prv = best_road_match(&self.graph, cur)
                .map_or(RoadMatch::AtJunction, |(r, _, _)| RoadMatch::Road(r));
            *guard = Some(VehicleState { prv: cur, r_prv, t_prv: p.timestamp_ms, auth_remaining: 0 });
            out.seeded = true;
            return Ok(out);
        };

        if state.auth_remaining > 0 {
            let key = self.keys.get(p.vehicle_id).expect("state table mirrors key table");
            if !matches!(p.auth_tag.as_ref().map(|_| verify(p, key)), Some(Ok(true))) {
                return Ok(self.flag(state, out, FlagReason::AuthFailure));
            }
            state.auth_remaining -= 1;
        }

        if p.timestamp_ms <= state.t_prv {
            return Ok(self.flag(state, out, FlagReason::Replay));
        }

        let result = check_pos(&self.graph, state, cur);
        out.case_used = Some(result.case_used);
        let Verdict::Valid(d) = result.verdict else {
            return Ok(self.flag(state, out, FlagReason::InvalidLocation));
        };
        let dt_s = (p.timestamp_ms - state.t_prv) as f64 / 1000.0;
        let limit = max_dist(&self.graph, &result, dt_s).expect("valid verdict has roads");
        let e = d / limit;
        out.d = Some(d);
        out.max_dist = Some(limit);
        out.e_value = Some(e);
        if e > 1.0 {
            return Ok(self.flag(state, out, FlagReason::EExceeds));
        }

        state.prv = cur;
        state.r_prv = result.matched_road;
        state.t_prv = p.timestamp_ms;
        out.auth_remaining = state.auth_remaining;
        Ok(out)
    }

    fn flag(&self, state: &mut VehicleState, mut out: DetectionOutcome, reason: FlagReason) -> DetectionOutcome {
        out.flagged = true;
        out.reason = Some(reason);
        out.alert = Some(attack_prevent(state, out.vehicle_id, out.timestamp_ms, self.t_auth));
        out.auth_remaining = state.auth_remaining;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps;
    use crate::packets::sign;

    fn grid() -> RoadGraph {
        RoadGraph::from_doc(&maps::grid_doc()).unwrap()
    }

    fn on_road(g: &RoadGraph, r: RoadId, s: f64) -> GeoPoint {
        g.road(r).point_at(s).0
    }

    #[test]
    fn same_road_thirteen_samples() {
        let g = grid();
        let r = g.road_id("H0-0").unwrap();
        let t = &g.road(r).samples;
        let state = VehicleState { prv: t[10].loc, r_prv: RoadMatch::Road(r), t_prv: 0, auth_remaining: 0 };
        let res = check_pos(&g, &state, t[23].loc);
        assert_eq!(res.case_used, CheckCase::SameRoad);
        // Oracle: great-circle distance between the two samples.
        let expect = haversine_m(t[10].loc, t[23].loc);
        assert!((res.distance().unwrap() - expect).abs() < 1e-9);
        assert!((res.distance().unwrap() - 13.0).abs() < 0.1);
    }

    #[test]
    fn adjacent_roads_through_junction() {
        let g = grid();
        // H0-0 runs east from J0-0 to J0-1; H0-1 continues east from J0-1.
        let a = g.road_id("H0-0").unwrap();
        let b = g.road_id("H0-1").unwrap();
        let ja = g.road(a).len;
        let prv = on_road(&g, a, ja - 5.0);
        let cur = on_road(&g, b, 7.0);
        let state = VehicleState { prv, r_prv: RoadMatch::Road(a), t_prv: 0, auth_remaining: 0 };
        let res = check_pos(&g, &state, cur);
        assert_eq!(res.case_used, CheckCase::AdjacentRoads);
        // Oracle: brute-force nearest samples on each road, then the two legs.
        let j = g.junction(g.junction_between(b, a).unwrap()).loc;
        let nearest = |r: RoadId, p: GeoPoint| {
            g.road(r)
                .samples
                .iter()
                .map(|s| s.loc)
                .min_by(|x, y| haversine_m(*x, p).total_cmp(&haversine_m(*y, p)))
                .unwrap()
        };
        let expect = haversine_m(nearest(a, prv), j) + haversine_m(nearest(b, cur), j);
        assert!((res.distance().unwrap() - expect).abs() < 1e-9);
        assert!((res.distance().unwrap() - 12.0).abs() < 1.0);
    }

    #[test]
    fn off_map_is_invalid() {
        let g = grid();
        let r = g.road_id("H0-0").unwrap();
        let state = VehicleState { prv: on_road(&g, r, 50.0), r_prv: RoadMatch::Road(r), t_prv: 0, auth_remaining: 0 };
        let far = GeoPoint::new(1.4, 103.9);
        assert_eq!(check_pos(&g, &state, far).verdict, Verdict::Invalid);
    }

    #[test]
    fn junction_cases() {
        let g = grid();
        let a = g.road_id("H2-1").unwrap();
        let j = g.road(a).to;
        let vicinity = crate::simulator::junction_vicinity_point(&g, j);
        assert!(g.candidate_roads(vicinity).is_empty());

        let prv = on_road(&g, a, g.road(a).len - 6.0);
        let state = VehicleState { prv, r_prv: RoadMatch::Road(a), t_prv: 0, auth_remaining: 0 };
        let to = check_pos(&g, &state, vicinity);
        assert_eq!(to.case_used, CheckCase::ToJunction);
        assert_eq!(to.matched_road, RoadMatch::AtJunction);
        assert!((to.distance().unwrap() - 6.0).abs() < 0.6);

        let b = g.road_id("V2-2").unwrap();
        let state = VehicleState { prv: vicinity, r_prv: RoadMatch::AtJunction, t_prv: 0, auth_remaining: 0 };
        let from = check_pos(&g, &state, on_road(&g, b, 9.0));
        assert_eq!(from.case_used, CheckCase::FromJunction);
        assert!((from.distance().unwrap() - 9.0).abs() < 0.6);

        // Staying inside the junction.
        let again = check_pos(&g, &state, vicinity);
        assert_eq!(again.case_used, CheckCase::ToJunction);
        assert_eq!(again.distance(), Some(0.0));

        // A junction-only fix around a different junction.
        let other = crate::simulator::junction_vicinity_point(&g, g.road(a).from);
        assert_eq!(check_pos(&g, &state, other).verdict, Verdict::Invalid);
    }

    #[test]
    fn max_dist_rules() {
        let g = grid();
        let slow = g.roads().iter().position(|r| r.sp == 13.9).unwrap();
        let fast = g.roads().iter().position(|r| r.sp == 25.0).unwrap();
        let same = CheckPosResult::valid(1.0, RoadMatch::Road(RoadId(slow as u32)), CheckCase::SameRoad, vec![RoadId(slow as u32)]);
        assert!((max_dist(&g, &same, 1.0).unwrap() - 13.9).abs() < 1e-12);
        let adj = CheckPosResult::valid(
            1.0,
            RoadMatch::Road(RoadId(fast as u32)),
            CheckCase::AdjacentRoads,
            vec![RoadId(slow as u32), RoadId(fast as u32)],
        );
        assert_eq!(max_dist(&g, &adj, 1.0), Some(25.0));
        let ten = g.roads().iter().position(|r| r.sp == 10.0);
        if let Some(ten) = ten {
            let r = CheckPosResult::valid(1.0, RoadMatch::Road(RoadId(ten as u32)), CheckCase::SameRoad, vec![RoadId(ten as u32)]);
            assert_eq!(max_dist(&g, &r, 2.0), Some(20.0));
        }
        assert_eq!(max_dist(&g, &CheckPosResult::invalid(), 1.0), None);
    }

    fn detector() -> (Detector, Arc<KeyTable>) {
        let keys = Arc::new(KeyTable::generate([10010], 1));
        (Detector::new(Arc::new(grid()), keys.clone(), DEFAULT_T_AUTH), keys)
    }

    fn packet_at(g: &RoadGraph, road: &str, s: f64, ts: i64) -> LocationPacket {
        let r = g.road_id(road).unwrap();
        let (p, b) = g.road(r).point_at(s);
        LocationPacket::new(10010, p, b, ts)
    }

    #[test]
    fn genuine_motion_below_one() {
        let (det, _) = detector();
        let g = det.graph().clone();
        let road = g.roads().iter().find(|r| r.sp == 13.9).unwrap().id.clone();
        let seed = det.process_packet(&packet_at(&g, &road, 50.0, 1_000)).unwrap();
        assert!(seed.seeded && !seed.flagged);
        let out = det.process_packet(&packet_at(&g, &road, 59.0, 2_000)).unwrap();
        assert!(!out.flagged);
        assert_eq!(out.case_used, Some(CheckCase::SameRoad));
        // Oracle: 9 sample steps over 13.9 m.
        let e = out.e_value.unwrap();
        assert!((e - 9.0 / 13.9).abs() < 0.01, "{e}");
    }

    #[test]
    fn example_spoof_flagged_and_window_opened() {
        let (det, _) = detector();
        let g = det.graph().clone();
        det.process_packet(&packet_at(&g, "H0-0", 50.0, 1_000)).unwrap();
        let mut spoof = packet_at(&g, "H0-0", 60.0, 2_000);
        spoof.lon -= 4.0;
        let out = det.process_packet(&spoof).unwrap();
        assert!(out.flagged);
        assert!(out.e_value.is_none_or(|e| e > 1.0));
        assert_eq!(out.auth_remaining, 10);
        assert!(out.alert.is_some());
        // State untouched by the flagged packet.
        assert_eq!(det.state(10010).unwrap().t_prv, 1_000);
    }

    #[test]
    fn replay_with_equal_timestamp_flagged() {
        let (det, _) = detector();
        let g = det.graph().clone();
        let p = packet_at(&g, "H0-0", 50.0, 1_000);
        det.process_packet(&p).unwrap();
        let q = packet_at(&g, "H0-0", 55.0, 2_000);
        det.process_packet(&q).unwrap();
        let before = det.state(10010).unwrap();
        let out = det.process_packet(&q).unwrap();
        assert_eq!(out.reason, Some(FlagReason::Replay));
        let after = det.state(10010).unwrap();
        assert_eq!((before.prv, before.t_prv), (after.prv, after.t_prv));
    }

    #[test]
    fn auth_window_counts_down_and_rearms() {
        let (det, keys) = detector();
        let g = det.graph().clone();
        let key = keys.get(10010).unwrap();
        det.process_packet(&packet_at(&g, "H0-0", 10.0, 1_000)).unwrap();
        let mut spoof = packet_at(&g, "H0-0", 15.0, 2_000);
        spoof.lon += 0.01;
        assert!(det.process_packet(&spoof).unwrap().flagged);

        let signed = sign(&packet_at(&g, "H0-0", 15.0, 2_000), key).unwrap();
        let out = det.process_packet(&signed).unwrap();
        assert!(!out.flagged);
        assert_eq!(out.auth_remaining, 9);

        // Unsigned inside the window: flagged, counter re-armed.
        let out = det.process_packet(&packet_at(&g, "H0-0", 20.0, 3_000)).unwrap();
        assert_eq!(out.reason, Some(FlagReason::AuthFailure));
        assert_eq!(out.auth_remaining, 10);

        // Wrong key is an auth failure too.
        let forged = sign(&packet_at(&g, "H0-0", 20.0, 3_000), &crate::packets::VehicleKey::new(10010, [7; 32])).unwrap();
        assert_eq!(det.process_packet(&forged).unwrap().reason, Some(FlagReason::AuthFailure));
    }

    #[test]
    fn unknown_and_malformed() {
        let (det, _) = detector();
        let p = LocationPacket::new(1, GeoPoint::new(1.3, 103.8), 0.0, 1);
        assert_eq!(det.process_packet(&p), Err(DetectError::UnknownVehicle(1)));
        let mut p = LocationPacket::new(10010, GeoPoint::new(1.3, 103.8), 0.0, 1);
        p.lat = f64::NAN;
        assert!(matches!(det.process_packet(&p), Err(DetectError::Malformed(_))));
        assert!(matches!(det.process_bytes(&[0u8; 7]), Err(DetectError::Malformed(_))));
    }

    #[test]
    fn vehicles_on_separate_threads_match_sequential_run() {
        let g = Arc::new(grid());
        let ids: Vec<VehicleId> = (1..=8).collect();
        let keys = Arc::new(KeyTable::generate(ids.clone(), 4));
        let road = g.road_id("H2-1").unwrap();
        // Vehicle v creeps v m/s; every third vehicle jumps at t = 5 s.
        let stream = |v: VehicleId| -> Vec<LocationPacket> {
            (0..20i64)
                .map(|t| {
                    let s = if v % 3 == 0 && t == 5 { 190.0 } else { 5.0 + (v as f64) * t as f64 / 4.0 };
                    LocationPacket::new(v, g.road(road).point_at(s).0, 90.0, t * 1000)
                })
                .collect()
        };
        let sequential = Detector::new(g.clone(), keys.clone(), DEFAULT_T_AUTH);
        let expected: Vec<Vec<DetectionOutcome>> = ids
            .iter()
            .map(|&v| stream(v).iter().map(|p| sequential.process_packet(p).unwrap()).collect())
            .collect();

        let shared = Detector::new(g.clone(), keys, DEFAULT_T_AUTH);
        let got: Vec<Vec<DetectionOutcome>> = std::thread::scope(|scope| {
            let handles: Vec<_> = ids
                .iter()
                .map(|&v| {
                    let (shared, packets) = (&shared, stream(v));
                    scope.spawn(move || packets.iter().map(|p| shared.process_packet(p).unwrap()).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(got, expected);
        assert!(got[2].iter().any(|o| o.flagged));
    }
}
