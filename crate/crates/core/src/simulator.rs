//! Deterministic trip generation and the per-second experiment loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacker::{AttackScenario, Attacker};
use crate::detector::{DetectError, Detector, OutcomeRecord, DEFAULT_T_AUTH, JUNCTION_RADIUS_M};
use crate::geo::{normalize_bearing, GeoPoint};
use crate::packets::{sign, KeyTable, LocationPacket, VehicleId};
use crate::roadmap::{load_roadmap, JunctionId, RoadGraph, RoadId, RoadmapError};

/// Vehicle ids are assigned from here upward, one per trip.
pub const FIRST_VEHICLE_ID: VehicleId = 10001;

/// A vehicle this close to a junction reports the junction vicinity.
pub const JUNCTION_REPORT_M: f64 = 2.0;

/// Default packet timestamp origin: 2024-05-09T00:00:00Z.
pub const DEFAULT_EPOCH_MS: i64 = 1_715_212_800_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Roadmap(#[from] RoadmapError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripOptions {
    pub duration_s: u32,
    /// Target fraction of each road's speed limit, in (0, 1].
    pub speed_factor: f64,
    /// Per-second multiplicative speed noise, uniform in ±`speed_jitter`.
    pub speed_jitter: f64,
    /// Halt for the rest of the second on reaching a junction. When false
    /// the vehicle carries on into the next road within the same second.
    pub stop_at_junctions: bool,
}

impl Default for TripOptions {
    fn default() -> Self {
        Self { duration_s: 600, speed_factor: 0.6, speed_jitter: 0.1, stop_at_junctions: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripPoint {
    pub t_s: u32,
    /// True position on the road.
    pub loc: GeoPoint,
    pub bearing: f64,
    pub road: RoadId,
    /// Road coordinate, meters from the road's `from` junction.
    pub s: f64,
    /// Speed used during the second that ended here, m/s.
    pub speed: f64,
    pub near_junction: Option<JunctionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trip {
    pub vehicle_id: VehicleId,
    pub seed: u64,
    pub start_time_ms: i64,
    pub route: Vec<RoadId>,
    /// One entry per second, the first being the seeding fix.
    pub points: Vec<TripPoint>,
}

impl Trip {
    pub fn duration_s(&self) -> u32 {
        self.points.len().saturating_sub(1) as u32
    }
}

struct Walker<'g> {
    graph: &'g RoadGraph,
    road: RoadId,
    forward: bool,
    /// Distance travelled along the current road from its entry junction.
    progress: f64,
}

impl Walker<'_> {
    fn len(&self) -> f64 {
        self.graph.road(self.road).len
    }

    fn exit_junction(&self) -> JunctionId {
        let r = self.graph.road(self.road);
        if self.forward { r.to } else { r.from }
    }

    fn turn(&mut self, rng: &mut ChaCha8Rng) {
        let j = self.exit_junction();
        let options: Vec<RoadId> = self.graph.roads_at(j).iter().copied().filter(|&r| r != self.road).collect();
        // Dead end: U-turn.
        let next = if options.is_empty() { self.road } else { options[rng.gen_range(0..options.len())] };
        self.road = next;
        self.forward = self.graph.road(next).from == j;
        self.progress = 0.0;
    }

    fn point(&self, t_s: u32, speed: f64) -> TripPoint {
        let r = self.graph.road(self.road);
        let s = if self.forward { self.progress } else { r.len - self.progress };
        let (loc, seg_bearing) = r.point_at(s);
        let bearing = if self.forward { seg_bearing } else { normalize_bearing(seg_bearing + 180.0) };
        let near_junction = if s <= JUNCTION_REPORT_M {
            Some(r.from)
        } else if r.len - s <= JUNCTION_REPORT_M {
            Some(r.to)
        } else {
            None
        };
        TripPoint { t_s, loc, bearing, road: self.road, s, speed, near_junction }
    }
}

fn draw_speed(rng: &mut ChaCha8Rng, sp: f64, opts: &TripOptions) -> f64 {
    let u = if opts.speed_jitter > 0.0 { rng.gen_range(-opts.speed_jitter..=opts.speed_jitter) } else { 0.0 };
    (opts.speed_factor * sp * (1.0 + u)).clamp(0.0, sp)
}

/// Seeded random walk over the road graph sampled once per second. The
/// vehicle starts at the entry junction of a random road.
pub fn generate_trip(
    graph: &RoadGraph,
    vehicle_id: VehicleId,
    seed: u64,
    opts: &TripOptions,
) -> Result<Trip, SimError> {
    if graph.roads().is_empty() {
        return Err(SimError::Config("roadmap has no roads".into()));
    }
    if !(opts.speed_factor > 0.0 && opts.speed_factor <= 1.0) {
        return Err(SimError::Config(format!("speed_factor {} not in (0, 1]", opts.speed_factor)));
    }
    if !(0.0..1.0).contains(&opts.speed_jitter) {
        return Err(SimError::Config(format!("speed_jitter {} not in [0, 1)", opts.speed_jitter)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Walker {
        graph,
        road: RoadId(rng.gen_range(0..graph.roads().len() as u32)),
        forward: rng.gen_bool(0.5),
        progress: 0.0,
    };
    let mut route = vec![w.road];
    let mut points = vec![w.point(0, 0.0)];

    for t in 1..=opts.duration_s {
        if w.progress >= w.len() {
            w.turn(&mut rng);
            route.push(w.road);
        }
        let mut speed = draw_speed(&mut rng, graph.road(w.road).sp, opts);
        let first_speed = speed;
        let mut time_left = 1.0;
        loop {
            let remaining = w.len() - w.progress;
            if speed * time_left < remaining {
                w.progress += speed * time_left;
                break;
            }
            w.progress = w.len();
            if opts.stop_at_junctions || speed <= 0.0 {
                break;
            }
            time_left -= remaining / speed;
            w.turn(&mut rng);
            route.push(w.road);
            speed = draw_speed(&mut rng, graph.road(w.road).sp, opts);
        }
        points.push(w.point(t, first_speed));
    }

    Ok(Trip { vehicle_id, seed, start_time_ms: 0, route, points })
}

/// Where a vehicle standing in junction `j` reports itself: the first point
/// on rings of 14 to 28 m around the junction that lies outside every road's
/// candidate box and still resolves to `j`. Falls back to the junction
/// location when the roads around it leave no such spot.
pub fn junction_vicinity_point(graph: &RoadGraph, j: JunctionId) -> GeoPoint {
    let center = graph.junction(j).loc;
    for radius in (14..=28).step_by(2) {
        for k in 0..24 {
            let bearing = 45.0 + 15.0 * k as f64;
            let p = center.destination(bearing, radius as f64);
            if graph.candidate_roads(p).is_empty()
                && graph.nearest_junction(p, JUNCTION_RADIUS_M).map(|(x, _)| x) == Some(j)
            {
                return p;
            }
        }
    }
    center
}

fn default_speed_factor() -> f64 {
    TripOptions::default().speed_factor
}
fn default_speed_jitter() -> f64 {
    TripOptions::default().speed_jitter
}
fn default_t_auth() -> u32 {
    DEFAULT_T_AUTH
}
fn default_true() -> bool {
    true
}
fn default_epoch() -> i64 {
    DEFAULT_EPOCH_MS
}

/// Simulation config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Roadmap path, relative to the config file's directory.
    pub map: PathBuf,
    pub trips: usize,
    /// Duration cap per trip, seconds.
    pub duration_s: u32,
    /// Shortest trip; trips draw their duration uniformly between this and
    /// the cap. Defaults to the cap.
    #[serde(default)]
    pub min_duration_s: Option<u32>,
    pub seed: u64,
    #[serde(default = "default_speed_factor")]
    pub speed_factor: f64,
    #[serde(default = "default_speed_jitter")]
    pub speed_jitter: f64,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default = "default_t_auth")]
    pub t_auth: u32,
    #[serde(default = "default_true")]
    pub stop_at_junctions: bool,
    #[serde(default = "default_epoch")]
    pub epoch_ms: i64,
    #[serde(default)]
    pub scenarios: Vec<AttackScenario>,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_json(&text)?;
        let map = path.parent().unwrap_or(Path::new(".")).join(&cfg.map);
        Ok((cfg, map))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.speed_factor > 0.0 && self.speed_factor <= 1.0) {
            return bad(format!("speed_factor {} not in (0, 1]", self.speed_factor));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return bad(format!("drop_probability {} not in [0, 1)", self.drop_probability));
        }
        if self.min_duration_s.is_some_and(|m| m > self.duration_s) {
            return bad("min_duration_s exceeds duration_s".into());
        }
        Ok(())
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            t_auth: self.t_auth,
            drop_probability: self.drop_probability,
            epoch_ms: self.epoch_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub t_auth: u32,
    pub drop_probability: f64,
    pub epoch_ms: i64,
}

/// Independent RNG streams derived from the master seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).gen()
}

const TRIP_STREAM: u64 = 1;
const KEY_STREAM: u64 = 2;
const DROP_STREAM: u64 = 3;

/// Builds `cfg.trips` trips with vehicle ids from [`FIRST_VEHICLE_ID`].
pub fn generate_trips(graph: &RoadGraph, cfg: &SimConfig) -> Result<Vec<Trip>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TRIP_STREAM));
    let min = cfg.min_duration_s.unwrap_or(cfg.duration_s);
    (0..cfg.trips)
        .map(|i| {
            let duration_s = rng.gen_range(min..=cfg.duration_s);
            let opts = TripOptions {
                duration_s,
                speed_factor: cfg.speed_factor,
                speed_jitter: cfg.speed_jitter,
                stop_at_junctions: cfg.stop_at_junctions,
            };
            generate_trip(graph, FIRST_VEHICLE_ID + i as u64, rng.gen(), &opts)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub packets: usize,
    pub flagged: usize,
    pub attacked_packets: usize,
    /// Flags raised on packets the attacker did not touch.
    pub false_positives: usize,
    /// Attacked packets accepted without a flag.
    pub missed_attacks: usize,
    pub max_e: Option<f64>,
    pub case_counts: BTreeMap<String, usize>,
    pub reason_counts: BTreeMap<String, usize>,
    /// Per attacked vehicle: packets from its first attacked packet up to and
    /// including the first flag.
    pub detection_latency: BTreeMap<VehicleId, Option<usize>>,
}

impl Summary {
    pub fn from_records(records: &[OutcomeRecord]) -> Self {
        let mut s = Summary { packets: records.len(), ..Default::default() };
        let mut first_attack: BTreeMap<VehicleId, usize> = BTreeMap::new();
        let mut per_vehicle_idx: BTreeMap<VehicleId, usize> = BTreeMap::new();
        for r in records {
            let idx = per_vehicle_idx.entry(r.vehicle_id).or_insert(0);
            *s.case_counts.entry(r.case_used.clone()).or_default() += 1;
            if r.flagged {
                s.flagged += 1;
                *s.reason_counts.entry(r.reason.clone()).or_default() += 1;
                if !r.attacked {
                    s.false_positives += 1;
                }
            }
            if r.attacked {
                s.attacked_packets += 1;
                if !r.flagged {
                    s.missed_attacks += 1;
                }
                first_attack.entry(r.vehicle_id).or_insert(*idx);
                s.detection_latency.entry(r.vehicle_id).or_insert(None);
            }
            if let Some(&start) = first_attack.get(&r.vehicle_id) {
                let slot = s.detection_latency.get_mut(&r.vehicle_id).unwrap();
                if slot.is_none() && r.flagged {
                    *slot = Some(*idx - start + 1);
                }
            }
            if let Some(e) = r.e_value {
                s.max_e = Some(s.max_e.map_or(e, |m: f64| m.max(e)));
            }
            *idx += 1;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripSummary {
    pub vehicle_id: VehicleId,
    pub duration_s: u32,
    pub packets: usize,
    pub max_e: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSummary {
    pub scenario: AttackScenario,
    pub interval_estimate_ms: Option<i64>,
    pub first_attacked_ts: Option<i64>,
    pub first_flag_ts: Option<i64>,
    /// Target packets from the first tampered one to the first flag,
    /// inclusive. 1 means the very first tampered packet was flagged.
    pub detection_latency: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub run: RunConfig,
    pub summary: Summary,
    pub dropped_packets: usize,
    pub trips: Vec<TripSummary>,
    pub attacks: Vec<AttackSummary>,
    #[serde(skip)]
    pub records: Vec<OutcomeRecord>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), SimError> {
        write_records(&self.records, w)
    }

    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<(), SimError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(|e| SimError::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn write_records<W: std::io::Write>(records: &[OutcomeRecord], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(r: R) -> Result<Vec<OutcomeRecord>, SimError> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<Result<Vec<_>, _>>()?)
}

struct AttackTrack {
    first_attacked: Option<(usize, i64)>,
    first_flag: Option<(usize, i64)>,
}

/// Runs every trip through the attacker(s) and the detector, one simulated
/// second at a time. Vehicles with an open authentication window sign their
/// packets.
pub fn run_experiment(
    graph: Arc<RoadGraph>,
    trips: &[Trip],
    scenarios: &[AttackScenario],
    cfg: &RunConfig,
) -> Result<RunReport, SimError> {
    let horizon_s = trips.iter().map(Trip::duration_s).max().unwrap_or(0);
    for s in scenarios {
        if !trips.iter().any(|t| t.vehicle_id == s.target) {
            return Err(SimError::Config(format!("scenario targets unknown vehicle {}", s.target)));
        }
        s.validate(horizon_s as i64 * 1000).map_err(SimError::Config)?;
    }

    let keys = Arc::new(KeyTable::generate(
        trips.iter().map(|t| t.vehicle_id),
        derive_seed(cfg.seed, KEY_STREAM),
    ));
    let detector = Detector::new(graph.clone(), keys.clone(), cfg.t_auth);
    let vicinity: Vec<GeoPoint> = graph.junction_ids().map(|j| junction_vicinity_point(&graph, j)).collect();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DROP_STREAM));
    let mut attackers: Vec<Attacker> = scenarios.iter().cloned().map(Attacker::new).collect();
    let mut tracks: Vec<AttackTrack> = scenarios
        .iter()
        .map(|_| AttackTrack { first_attacked: None, first_flag: None })
        .collect();

    let mut order: Vec<&Trip> = trips.iter().collect();
    order.sort_by_key(|t| t.vehicle_id);
    let mut records = Vec::new();
    let mut dropped = 0;
    // Packets delivered per vehicle so far, for latency accounting.
    let mut delivered: BTreeMap<VehicleId, usize> = BTreeMap::new();
    let mut trip_max_e: BTreeMap<VehicleId, (usize, Option<f64>)> = BTreeMap::new();

    let mut deliver = |p: &LocationPacket, origin: VehicleId, attacked: bool, records: &mut Vec<OutcomeRecord>, tracks: &mut [AttackTrack]| {
        let record = match detector.process_packet(p) {
            Ok(outcome) => outcome.to_record(attacked),
            Err(e) => rejected_record(p, &e, attacked, detector.auth_remaining(origin)),
        };
        let idx = delivered.entry(origin).or_insert(0);
        for (track, s) in tracks.iter_mut().zip(scenarios) {
            if s.target != origin {
                continue;
            }
            if attacked && track.first_attacked.is_none() {
                track.first_attacked = Some((*idx, p.timestamp_ms));
            }
            if record.flagged && track.first_attacked.is_some() && track.first_flag.is_none() {
                track.first_flag = Some((*idx, p.timestamp_ms));
            }
        }
        *idx += 1;
        let entry = trip_max_e.entry(origin).or_insert((0, None));
        entry.0 += 1;
        if let (Some(e), false) = (record.e_value, attacked) {
            entry.1 = Some(entry.1.map_or(e, |m: f64| m.max(e)));
        }
        records.push(record);
    };

    let mut tick: u32 = 0;
    loop {
        let in_trips = tick <= horizon_s && !trips.is_empty();
        if !in_trips && !attackers.iter().any(Attacker::has_pending) {
            break;
        }
        let now_ms = tick as i64 * 1000;
        for trip in &order {
            let vid = trip.vehicle_id;
            if let Some(pt) = trip.points.get(tick as usize) {
                if tick > 0 && cfg.drop_probability > 0.0 && drop_rng.gen_bool(cfg.drop_probability) {
                    dropped += 1;
                } else {
                    let loc = pt.near_junction.map_or(pt.loc, |j| vicinity[j.index()]);
                    let mut packet = LocationPacket::new(vid, loc, pt.bearing, cfg.epoch_ms + trip.start_time_ms + now_ms);
                    if detector.auth_remaining(vid) > 0 {
                        packet = sign(&packet, keys.get(vid).expect("key per trip")).expect("own key");
                    }
                    let mut stream = vec![(packet, false)];
                    for a in attackers.iter_mut() {
                        stream = stream
                            .into_iter()
                            .flat_map(|(p, attacked)| {
                                a.intercept(&p, now_ms)
                                    .into_iter()
                                    .map(move |q| {
                                        let changed = q != p;
                                        (q, attacked || changed)
                                    })
                                    .collect::<Vec<_>>()
                            })
                            .collect();
                    }
                    for (p, attacked) in &stream {
                        deliver(p, vid, *attacked, &mut records, &mut tracks);
                    }
                }
            }
            for a in attackers.iter_mut().filter(|a| a.scenario().target == vid) {
                for p in a.release_due(now_ms) {
                    deliver(&p, vid, true, &mut records, &mut tracks);
                }
            }
        }
        tick += 1;
    }

    let attacks = tracks
        .iter()
        .zip(&attackers)
        .map(|(t, a)| AttackSummary {
            scenario: a.scenario().clone(),
            interval_estimate_ms: a.interval_estimate(),
            first_attacked_ts: t.first_attacked.map(|x| x.1),
            first_flag_ts: t.first_flag.map(|x| x.1),
            detection_latency: match (t.first_attacked, t.first_flag) {
                (Some((a, _)), Some((f, _))) => Some(f - a + 1),
                _ => None,
            },
        })
        .collect();
    let trip_summaries = order
        .iter()
        .map(|t| {
            let (packets, max_e) = trip_max_e.get(&t.vehicle_id).copied().unwrap_or((0, None));
            TripSummary { vehicle_id: t.vehicle_id, duration_s: t.duration_s(), packets, max_e }
        })
        .collect();

    Ok(RunReport {
        run: cfg.clone(),
        summary: Summary::from_records(&records),
        dropped_packets: dropped,
        trips: trip_summaries,
        attacks,
        records,
    })
}

fn rejected_record(p: &LocationPacket, e: &DetectError, attacked: bool, auth_remaining: u32) -> OutcomeRecord {
    OutcomeRecord {
        vehicle_id: p.vehicle_id,
        timestamp: p.timestamp_ms,
        case_used: "Unchecked".into(),
        d: None,
        max_dist: None,
        e_value: None,
        flagged: true,
        reason: match e {
            DetectError::UnknownVehicle(_) => "unknown_vehicle".into(),
            DetectError::Malformed(_) => "malformed".into(),
        },
        auth_remaining,
        attacked,
    }
}

/// Loads the config's map, generates its trips and runs them.
pub fn simulate_config(cfg: &SimConfig, map_path: &Path) -> Result<RunReport, SimError> {
    cfg.validate()?;
    let graph = Arc::new(load_roadmap(map_path)?);
    let trips = generate_trips(&graph, cfg)?;
    run_experiment(graph, &trips, &cfg.scenarios, &cfg.run_config())
}
