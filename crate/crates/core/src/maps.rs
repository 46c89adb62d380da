//! Generators for the two bundled roadmaps.
//!
//! `maps/grid5x5.json` and `maps/city_extract.json` in this crate are the
//! pretty-printed output of [`grid_doc`] and [`city_doc`]; a test keeps them
//! in sync.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::{haversine_m, GeoPoint, EARTH_RADIUS_M};
use crate::roadmap::{JunctionRecord, RoadRecord, RoadmapDoc};

pub const GRID_ORIGIN: GeoPoint = GeoPoint::new(1.3, 103.8);
pub const GRID_SIZE: usize = 5;
pub const GRID_SPACING_M: f64 = 200.0;
pub const CITY_SEED: u64 = 2024;

const GRID_SPEEDS: [f64; 5] = [8.0, 10.0, 13.9, 16.7, 25.0];
const CITY_SPEEDS: [f64; 5] = [8.3, 11.1, 13.9, 16.7, 22.2];

fn deg_lat(m: f64) -> f64 {
    (m / EARTH_RADIUS_M).to_degrees()
}

fn deg_lon(m: f64, lat: f64) -> f64 {
    (m / (EARTH_RADIUS_M * lat.to_radians().cos())).to_degrees()
}

fn road(id: String, from: String, to: String, sp: f64, line: &[GeoPoint]) -> RoadRecord {
    let length_m = line.windows(2).map(|w| haversine_m(w[0], w[1])).sum();
    RoadRecord {
        id,
        from,
        to,
        length_m,
        max_speed_mps: sp,
        polyline: line.iter().map(|p| [p.lat, p.lon]).collect(),
    }
}

/// A 5×5 junction grid with 200 m edges and speed limits between 8 and
/// 25 m/s. Junction `J{row}-{col}`; roads `H{row}-{col}` run east from
/// `J{row}-{col}`, roads `V{row}-{col}` run north from it.
pub fn grid_doc() -> RoadmapDoc {
    let dlat = deg_lat(GRID_SPACING_M);
    let dlon = deg_lon(GRID_SPACING_M, GRID_ORIGIN.lat);
    let at = |r: usize, c: usize| {
        GeoPoint::new(GRID_ORIGIN.lat + r as f64 * dlat, GRID_ORIGIN.lon + c as f64 * dlon)
    };
    let name = |r: usize, c: usize| format!("J{r}-{c}");

    let mut doc = RoadmapDoc::default();
    for r in 0..GRID_SIZE {
        for c in 0..GRID_SIZE {
            let p = at(r, c);
            doc.junctions.push(JunctionRecord { id: name(r, c), lat: p.lat, lon: p.lon });
        }
    }
    for r in 0..GRID_SIZE {
        for c in 0..GRID_SIZE {
            let i = r * (GRID_SIZE - 1) + c;
            if c + 1 < GRID_SIZE {
                doc.roads.push(road(
                    format!("H{r}-{c}"),
                    name(r, c),
                    name(r, c + 1),
                    GRID_SPEEDS[i % GRID_SPEEDS.len()],
                    &[at(r, c), at(r, c + 1)],
                ));
            }
            if r + 1 < GRID_SIZE {
                doc.roads.push(road(
                    format!("V{r}-{c}"),
                    name(r, c),
                    name(r + 1, c),
                    GRID_SPEEDS[(i + 2) % GRID_SPEEDS.len()],
                    &[at(r, c), at(r + 1, c)],
                ));
            }
        }
    }
    doc
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// An irregular street network: an 8×8 lattice of jittered junctions,
/// thinned to a connected subset of links, with gently curved roads.
pub fn city_doc() -> RoadmapDoc {
    const N: usize = 8;
    const SPACING_M: f64 = 160.0;
    const JITTER_M: f64 = 25.0;
    const BULGE_M: f64 = 12.0;
    const KEEP_EXTRA: f64 = 0.6;

    let mut rng = ChaCha8Rng::seed_from_u64(CITY_SEED);
    let origin = GeoPoint::new(1.33, 103.85);
    let mut locs = Vec::with_capacity(N * N);
    for r in 0..N {
        for c in 0..N {
            let north = r as f64 * SPACING_M + rng.gen_range(-JITTER_M..=JITTER_M);
            let east = c as f64 * SPACING_M + rng.gen_range(-JITTER_M..=JITTER_M);
            locs.push(GeoPoint::new(
                origin.lat + deg_lat(north),
                origin.lon + deg_lon(east, origin.lat),
            ));
        }
    }

    let mut links = Vec::new();
    for r in 0..N {
        for c in 0..N {
            if c + 1 < N {
                links.push((r * N + c, r * N + c + 1));
            }
            if r + 1 < N {
                links.push((r * N + c, (r + 1) * N + c));
            }
        }
    }
    // Random spanning tree first, then a random share of the remaining links.
    let mut order: Vec<(f64, usize)> = links.iter().enumerate().map(|(i, _)| (rng.gen(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut parent: Vec<usize> = (0..N * N).collect();
    let mut keep = vec![false; links.len()];
    for &(_, i) in &order {
        let (a, b) = links[i];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            keep[i] = true;
        }
    }
    for k in keep.iter_mut() {
        if !*k && rng.gen_bool(KEEP_EXTRA) {
            *k = true;
        }
    }

    let name = |i: usize| format!("C{:02}", i);
    let mut doc = RoadmapDoc::default();
    for (i, p) in locs.iter().enumerate() {
        doc.junctions.push(JunctionRecord { id: name(i), lat: p.lat, lon: p.lon });
    }
    for (i, &(a, b)) in links.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let (pa, pb) = (locs[a], locs[b]);
        let bulge = rng.gen_range(-BULGE_M..=BULGE_M);
        let seg = crate::geo::bearing_deg(pa, pb);
        let mut line = vec![pa];
        const INTERIOR: usize = 4;
        for k in 1..=INTERIOR {
            let t = k as f64 / (INTERIOR + 1) as f64;
            let base = crate::geo::lerp(pa, pb, t);
            let offset = bulge * (std::f64::consts::PI * t).sin();
            line.push(base.destination(seg + 90.0, offset));
        }
        line.push(pb);
        let sp = CITY_SPEEDS[rng.gen_range(0..CITY_SPEEDS.len())];
        doc.roads.push(road(format!("{}_{}", name(a), name(b)), name(a), name(b), sp, &line));
    }
    doc
}
