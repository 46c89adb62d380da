//! Road graph ingestion and offline preprocessing.
//!
//! A roadmap file lists junctions and roads. Loading it validates the
//! references and geometry, samples every road at 1 m arc-length spacing,
//! builds the junction→roads adjacency list and the symmetric road-pair →
//! junction dictionary used by the detector.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{cumulative_lengths, haversine_m, point_along, GeoPoint};

/// Per-axis expansion, in degrees, applied to road bounding boxes when
/// collecting candidate roads for a reported point (~11 m).
pub const BBOX_MARGIN_DEG: f64 = 1e-4;

/// Road endpoints must sit within this distance of their junctions.
pub const ENDPOINT_TOLERANCE_M: f64 = 1.0;

/// Maximum relative disagreement between `length_m` and polyline arc length.
pub const LENGTH_TOLERANCE: f64 = 0.01;

const CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum RoadmapError {
    #[error("cannot read roadmap: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed roadmap: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid roadmap: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> RoadmapError {
    RoadmapError::Validation(msg.into())
}

/// Index of a road inside a [`RoadGraph`]. Roads are ordered by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoadId(pub u32);

/// Index of a junction inside a [`RoadGraph`]. Junctions are ordered by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JunctionId(pub u32);

impl RoadId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl JunctionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

// ---------------------------------------------------------------------------
// Interchange format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub max_speed_mps: f64,
    /// `[lat, lon]` pairs.
    pub polyline: Vec<[f64; 2]>,
}

/// The roadmap JSON document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadmapDoc {
    pub junctions: Vec<JunctionRecord>,
    pub roads: Vec<RoadRecord>,
}

impl RoadmapDoc {
    pub fn from_json(text: &str) -> Result<Self, RoadmapError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("roadmap serializes")
    }
}

// ---------------------------------------------------------------------------
// Graph

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub loc: GeoPoint,
}

/// A sampled location on a road with the bearing of its segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledPoint {
    pub loc: GeoPoint,
    pub bearing: f64,
}

/// Bounding sphere over a run of consecutive samples; lets the nearest-sample
/// search skip runs that cannot beat the current best.
#[derive(Debug, Clone, PartialEq)]
struct SampleChunk {
    start: usize,
    end: usize,
    center: GeoPoint,
    radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub id: String,
    pub from: JunctionId,
    pub to: JunctionId,
    /// Authoritative length in meters.
    pub len: f64,
    pub bbox_min: GeoPoint,
    pub bbox_max: GeoPoint,
    /// Maximum allowable speed, m/s.
    pub sp: f64,
    pub polyline: Vec<GeoPoint>,
    /// Samples 1 m apart; `floor(len) + 1` entries.
    pub samples: Vec<SampledPoint>,
    cumulative: Vec<f64>,
    chunks: Vec<SampleChunk>,
}

impl Road {
    /// Polyline arc length in meters.
    pub fn arc_len(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Location and travel bearing at road coordinate `s` (meters of
    /// authoritative length, measured from the `from` junction).
    pub fn point_at(&self, s: f64) -> (GeoPoint, f64) {
        let scale = self.arc_len() / self.len;
        point_along(&self.polyline, &self.cumulative, s * scale)
    }

    /// Whether `p` lies inside the bounding box grown by [`BBOX_MARGIN_DEG`].
    pub fn box_contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.bbox_min.lat - BBOX_MARGIN_DEG
            && p.lat <= self.bbox_max.lat + BBOX_MARGIN_DEG
            && p.lon >= self.bbox_min.lon - BBOX_MARGIN_DEG
            && p.lon <= self.bbox_max.lon + BBOX_MARGIN_DEG
    }

    /// Index of the sample closest to `p` and its distance in meters.
    /// Ties go to the lowest index.
    pub fn nearest_sample(&self, p: GeoPoint) -> (usize, f64) {
        // Float slack on the triangle-inequality bound so equal distances are
        // never pruned.
        const SLACK_M: f64 = 1e-6;
        let mut order: Vec<(f64, usize)> = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (haversine_m(p, c.center) - c.radius, i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut best = (usize::MAX, f64::INFINITY);
        for (bound, ci) in order {
            if bound - SLACK_M > best.1 {
                break;
            }
            let chunk = &self.chunks[ci];
            for k in chunk.start..chunk.end {
                let d = haversine_m(self.samples[k].loc, p);
                if d < best.1 || (d == best.1 && k < best.0) {
                    best = (k, d);
                }
            }
        }
        best
    }
}

/// Samples a polyline every `arc_len / len` meters (1 m when the declared
/// length matches the geometry), returning `floor(len) + 1` points.
pub fn sample_road(polyline: &[GeoPoint], len: f64) -> Result<Vec<SampledPoint>, RoadmapError> {
    if polyline.len() < 2 {
        return Err(invalid("polyline needs at least 2 points"));
    }
    if !(len.is_finite() && len > 0.0) {
        return Err(invalid("length must be positive"));
    }
    let cumulative = cumulative_lengths(polyline);
    sample_with(polyline, &cumulative, len)
}

fn sample_with(
    polyline: &[GeoPoint],
    cumulative: &[f64],
    len: f64,
) -> Result<Vec<SampledPoint>, RoadmapError> {
    let arc = *cumulative.last().unwrap_or(&0.0);
    if arc <= 0.0 {
        return Err(invalid("degenerate polyline (all points identical)"));
    }
    let scale = arc / len;
    let n = len.floor() as usize + 1;
    Ok((0..n)
        .map(|k| {
            let (loc, bearing) = point_along(polyline, cumulative, k as f64 * scale);
            SampledPoint { loc, bearing }
        })
        .collect())
}

fn build_chunks(samples: &[SampledPoint]) -> Vec<SampleChunk> {
    samples
        .chunks(CHUNK)
        .enumerate()
        .map(|(i, run)| {
            let center = run[run.len() / 2].loc;
            let radius = run
                .iter()
                .map(|s| haversine_m(center, s.loc))
                .fold(0.0, f64::max);
            SampleChunk {
                start: i * CHUNK,
                end: i * CHUNK + run.len(),
                center,
                radius,
            }
        })
        .collect()
}

/// The preprocessed road graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    junctions: Vec<Junction>,
    roads: Vec<Road>,
    adjacency: Vec<Vec<RoadId>>,
    road_pair_junction: HashMap<(RoadId, RoadId), JunctionId>,
    junction_by_name: HashMap<String, JunctionId>,
    road_by_name: HashMap<String, RoadId>,
}

impl RoadGraph {
    pub fn from_doc(doc: &RoadmapDoc) -> Result<Self, RoadmapError> {
        let mut jrecs: Vec<&JunctionRecord> = doc.junctions.iter().collect();
        jrecs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut junctions = Vec::with_capacity(jrecs.len());
        let mut junction_by_name = HashMap::new();
        for (i, j) in jrecs.into_iter().enumerate() {
            let loc = GeoPoint::new(j.lat, j.lon);
            if !loc.is_valid() {
                return Err(invalid(format!("junction {}: lat/lon out of range", j.id)));
            }
            if junction_by_name
                .insert(j.id.clone(), JunctionId(i as u32))
                .is_some()
            {
                return Err(invalid(format!("junction {}: duplicate id", j.id)));
            }
            junctions.push(Junction { id: j.id.clone(), loc });
        }

        let mut rrecs: Vec<&RoadRecord> = doc.roads.iter().collect();
        rrecs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut roads = Vec::with_capacity(rrecs.len());
        let mut road_by_name = HashMap::new();
        for (i, r) in rrecs.into_iter().enumerate() {
            if road_by_name.insert(r.id.clone(), RoadId(i as u32)).is_some() {
                return Err(invalid(format!("road {}: duplicate id", r.id)));
            }
            roads.push(build_road(r, &junctions, &junction_by_name)?);
        }

        let mut adjacency: Vec<BTreeSet<RoadId>> = vec![BTreeSet::new(); junctions.len()];
        for (i, r) in roads.iter().enumerate() {
            adjacency[r.from.index()].insert(RoadId(i as u32));
            adjacency[r.to.index()].insert(RoadId(i as u32));
        }
        let adjacency: Vec<Vec<RoadId>> =
            adjacency.into_iter().map(|s| s.into_iter().collect()).collect();

        // Junctions are visited in id order, so a pair shared by two
        // junctions resolves to the later one.
        let mut road_pair_junction = HashMap::new();
        for (j, incident) in adjacency.iter().enumerate() {
            for &a in incident {
                for &b in incident {
                    if a != b {
                        road_pair_junction.insert((a, b), JunctionId(j as u32));
                    }
                }
            }
        }

        Ok(Self {
            junctions,
            roads,
            adjacency,
            road_pair_junction,
            junction_by_name,
            road_by_name,
        })
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn roads(&self) -> &[Road] {
        &self.roads
    }

    pub fn junction(&self, id: JunctionId) -> &Junction {
        &self.junctions[id.index()]
    }

    pub fn road(&self, id: RoadId) -> &Road {
        &self.roads[id.index()]
    }

    pub fn road_id(&self, name: &str) -> Option<RoadId> {
        self.road_by_name.get(name).copied()
    }

    pub fn junction_id(&self, name: &str) -> Option<JunctionId> {
        self.junction_by_name.get(name).copied()
    }

    pub fn road_ids(&self) -> impl Iterator<Item = RoadId> {
        (0..self.roads.len() as u32).map(RoadId)
    }

    pub fn junction_ids(&self) -> impl Iterator<Item = JunctionId> {
        (0..self.junctions.len() as u32).map(JunctionId)
    }

    /// Roads that begin or end at `j`, ascending.
    pub fn roads_at(&self, j: JunctionId) -> &[RoadId] {
        &self.adjacency[j.index()]
    }

    /// The junction joining roads `a` and `b`, if any.
    pub fn junction_between(&self, a: RoadId, b: RoadId) -> Option<JunctionId> {
        self.road_pair_junction.get(&(a, b)).copied()
    }

    pub fn road_pair_count(&self) -> usize {
        self.road_pair_junction.len()
    }

    pub fn sample_count(&self) -> usize {
        self.roads.iter().map(|r| r.samples.len()).sum()
    }

    /// Roads whose margin-expanded bounding box contains `p`, ascending.
    pub fn candidate_roads(&self, p: GeoPoint) -> Vec<RoadId> {
        self.road_ids()
            .filter(|&r| self.road(r).box_contains(p))
            .collect()
    }

    pub fn nearest_sample(&self, road: RoadId, p: GeoPoint) -> (usize, f64) {
        self.road(road).nearest_sample(p)
    }

    /// Nearest junction to `p` among those incident to `road`, provided it
    /// lies within `radius_m`. Ties go to the lowest junction id.
    pub fn nearest_junction_of_road(
        &self,
        road: RoadId,
        p: GeoPoint,
        radius_m: f64,
    ) -> Option<(JunctionId, f64)> {
        let r = self.road(road);
        let mut ends = [r.from, r.to];
        ends.sort();
        nearest_within(self, ends.iter().copied(), p, radius_m)
    }

    /// Nearest junction to `p` overall, within `radius_m`.
    pub fn nearest_junction(&self, p: GeoPoint, radius_m: f64) -> Option<(JunctionId, f64)> {
        nearest_within(self, self.junction_ids(), p, radius_m)
    }

    /// Deterministic JSON dump of the preprocessed structures.
    pub fn to_cache_json(&self) -> String {
        let mut pairs: Vec<(&str, &str, &str)> = self
            .road_pair_junction
            .iter()
            .map(|(&(a, b), &j)| {
                (
                    self.road(a).id.as_str(),
                    self.road(b).id.as_str(),
                    self.junction(j).id.as_str(),
                )
            })
            .collect();
        pairs.sort();
        let cache = CacheDoc {
            junctions: self
                .junction_ids()
                .map(|j| CacheJunction {
                    id: &self.junction(j).id,
                    lat: self.junction(j).loc.lat,
                    lon: self.junction(j).loc.lon,
                    roads: self.roads_at(j).iter().map(|&r| self.road(r).id.as_str()).collect(),
                })
                .collect(),
            roads: self
                .roads
                .iter()
                .map(|r| CacheRoad {
                    id: &r.id,
                    from: &self.junction(r.from).id,
                    to: &self.junction(r.to).id,
                    length_m: r.len,
                    max_speed_mps: r.sp,
                    bbox_min: [r.bbox_min.lat, r.bbox_min.lon],
                    bbox_max: [r.bbox_max.lat, r.bbox_max.lon],
                    samples: r
                        .samples
                        .iter()
                        .map(|s| [s.loc.lat, s.loc.lon, s.bearing])
                        .collect(),
                })
                .collect(),
            road_pair_junction: pairs,
        };
        serde_json::to_string(&cache).expect("cache serializes")
    }
}

fn nearest_within(
    graph: &RoadGraph,
    ids: impl Iterator<Item = JunctionId>,
    p: GeoPoint,
    radius_m: f64,
) -> Option<(JunctionId, f64)> {
    let mut best: Option<(JunctionId, f64)> = None;
    for j in ids {
        let d = haversine_m(graph.junction(j).loc, p);
        if d <= radius_m && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best
}

fn build_road(
    r: &RoadRecord,
    junctions: &[Junction],
    by_name: &HashMap<String, JunctionId>,
) -> Result<Road, RoadmapError> {
    let from = *by_name
        .get(&r.from)
        .ok_or_else(|| invalid(format!("road {}: from junction {} not found", r.id, r.from)))?;
    let to = *by_name
        .get(&r.to)
        .ok_or_else(|| invalid(format!("road {}: to junction {} not found", r.id, r.to)))?;
    if !(r.length_m.is_finite() && r.length_m > 0.0) {
        return Err(invalid(format!("road {}: length_m must be > 0", r.id)));
    }
    if !(r.max_speed_mps.is_finite() && r.max_speed_mps > 0.0) {
        return Err(invalid(format!("road {}: max_speed_mps must be > 0", r.id)));
    }
    if r.polyline.len() < 2 {
        return Err(invalid(format!("road {}: polyline needs at least 2 points", r.id)));
    }
    let polyline: Vec<GeoPoint> = r.polyline.iter().map(|&[lat, lon]| GeoPoint::new(lat, lon)).collect();
    if polyline.iter().any(|p| !p.is_valid()) {
        return Err(invalid(format!("road {}: polyline point out of range", r.id)));
    }
    let cumulative = cumulative_lengths(&polyline);
    let arc = *cumulative.last().unwrap();
    if arc <= 0.0 {
        return Err(invalid(format!("road {}: degenerate polyline", r.id)));
    }
    if (arc - r.length_m).abs() / r.length_m >= LENGTH_TOLERANCE {
        return Err(invalid(format!(
            "road {}: length_m {} disagrees with polyline length {:.3}",
            r.id, r.length_m, arc
        )));
    }
    for (end, j) in [(polyline[0], from), (*polyline.last().unwrap(), to)] {
        let d = haversine_m(end, junctions[j.index()].loc);
        if d > ENDPOINT_TOLERANCE_M {
            return Err(invalid(format!(
                "road {}: polyline endpoint {:.2} m from junction {}",
                r.id,
                d,
                junctions[j.index()].id
            )));
        }
    }

    let samples = sample_with(&polyline, &cumulative, r.length_m)?;
    let (mut min, mut max) = (polyline[0], polyline[0]);
    for p in &polyline {
        min.lat = min.lat.min(p.lat);
        min.lon = min.lon.min(p.lon);
        max.lat = max.lat.max(p.lat);
        max.lon = max.lon.max(p.lon);
    }
    let chunks = build_chunks(&samples);
    Ok(Road {
        id: r.id.clone(),
        from,
        to,
        len: r.length_m,
        bbox_min: min,
        bbox_max: max,
        sp: r.max_speed_mps,
        polyline,
        samples,
        cumulative,
        chunks,
    })
}

/// Reads, validates and preprocesses a roadmap file.
pub fn load_roadmap(path: impl AsRef<Path>) -> Result<RoadGraph, RoadmapError> {
    let text = std::fs::read_to_string(path)?;
    RoadGraph::from_doc(&RoadmapDoc::from_json(&text)?)
}

#[derive(Serialize)]
struct CacheJunction<'a> {
    id: &'a str,
    lat: f64,
    lon: f64,
    roads: Vec<&'a str>,
}

#[derive(Serialize)]
struct CacheRoad<'a> {
    id: &'a str,
    from: &'a str,
    to: &'a str,
    length_m: f64,
    max_speed_mps: f64,
    bbox_min: [f64; 2],
    bbox_max: [f64; 2],
    samples: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct CacheDoc<'a> {
    junctions: Vec<CacheJunction<'a>>,
    roads: Vec<CacheRoad<'a>>,
    road_pair_junction: Vec<(&'a str, &'a str, &'a str)>,
}

impl fmt::Display for RoadGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "junctions: {}\nroads: {}\nsampled_points: {}\nroad_pairs: {}",
            self.junctions.len(),
            self.roads.len(),
            self.sample_count(),
            self.road_pair_count()
        )
    }
}
