use std::ffi::{CStr, CString};
use std::ptr;

use spoofguard::maps::grid_doc;
use spoofguard::roadmap::RoadGraph;
use spoofguard_ffi::*;

fn grid_handle() -> *mut SgGraph {
    let json = CString::new(grid_doc().to_json_pretty()).unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { sg_graph_from_json(json.as_ptr(), &mut g) }, SgStatus::Ok);
    assert!(!g.is_null());
    g
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sg_last_error_message()) }.to_string_lossy().into_owned()
}

fn packet_on_road(road: &str, s: f64, ts: i64) -> SgPacket {
    let g = RoadGraph::from_doc(&grid_doc()).unwrap();
    let (p, bearing) = g.road(g.road_id(road).unwrap()).point_at(s);
    SgPacket { vehicle_id: 7, lat: p.lat, lon: p.lon, bearing, timestamp_ms: ts }
}

fn serialize(p: &SgPacket) -> Vec<u8> {
    let mut buf = [0u8; SG_SIGNED_LEN];
    let mut n = 0;
    assert_eq!(unsafe { sg_packet_serialize(p, buf.as_mut_ptr(), buf.len(), &mut n) }, SgStatus::Ok);
    buf[..n].to_vec()
}

#[test]
fn graph_counts_for_grid() {
    let g = grid_handle();
    let mut c = SgGraphCounts::default();
    assert_eq!(unsafe { sg_graph_counts(g, &mut c) }, SgStatus::Ok);
    assert_eq!((c.junctions, c.roads), (25, 40));
    let oracle = RoadGraph::from_doc(&grid_doc()).unwrap();
    let samples: usize = oracle.roads().iter().map(|r| r.len.floor() as usize + 1).sum();
    assert_eq!(c.sampled_points, samples);
    unsafe { sg_graph_free(g) };
}

#[test]
fn load_errors_map_to_codes() {
    let mut g = ptr::null_mut();
    let missing = CString::new("/nonexistent/map.json").unwrap();
    assert_eq!(unsafe { sg_graph_load(missing.as_ptr(), &mut g) }, SgStatus::Io);
    assert!(g.is_null());

    let bad = CString::new(r#"{"junctions": [{"id": "A", "lat": 1.0}], "roads": []}"#).unwrap();
    assert_eq!(unsafe { sg_graph_from_json(bad.as_ptr(), &mut g) }, SgStatus::Parse);
    assert!(last_error().contains("lon"), "{}", last_error());

    let invalid = CString::new(r#"{"junctions": [{"id": "A", "lat": 95.0, "lon": 0.0}], "roads": []}"#).unwrap();
    assert_eq!(unsafe { sg_graph_from_json(invalid.as_ptr(), &mut g) }, SgStatus::Validation);

    assert_eq!(unsafe { sg_graph_from_json(ptr::null(), &mut g) }, SgStatus::NullPointer);
    let not_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { sg_graph_from_json(not_utf8.as_ptr().cast(), &mut g) }, SgStatus::InvalidUtf8);
}

#[test]
fn detector_flags_jump_and_demands_signatures() {
    let g = grid_handle();
    let ids = [7u64];
    let mut keys = ptr::null_mut();
    assert_eq!(unsafe { sg_keys_generate(ids.as_ptr(), 1, 42, &mut keys) }, SgStatus::Ok);
    let mut det = ptr::null_mut();
    assert_eq!(unsafe { sg_detector_new(g, keys, 10, &mut det) }, SgStatus::Ok);
    // The detector keeps its own references.
    unsafe { sg_graph_free(g) };

    let process = |bytes: &[u8]| {
        let mut o = std::mem::MaybeUninit::<SgOutcome>::uninit();
        let st = unsafe { sg_detector_process(det, bytes.as_ptr(), bytes.len(), o.as_mut_ptr()) };
        assert_eq!(st, SgStatus::Ok, "{}", last_error());
        unsafe { o.assume_init() }
    };

    let seed = process(&serialize(&packet_on_road("H0-0", 20.0, 0)));
    assert_eq!(seed.case_used, SgCase::Seed);
    assert!(seed.e_value.is_nan());

    let ok = process(&serialize(&packet_on_road("H0-0", 25.0, 1000)));
    assert_eq!(ok.case_used, SgCase::SameRoad);
    assert!(!ok.flagged && ok.e_value <= 1.0);

    let jump = process(&serialize(&packet_on_road("H0-0", 150.0, 2000)));
    assert!(jump.flagged && jump.alert);
    assert_eq!(jump.reason, SgReason::EExceeds);
    assert_eq!(unsafe { sg_detector_auth_remaining(det, 7) }, 10);

    let unsigned = process(&serialize(&packet_on_road("H0-0", 28.0, 3000)));
    assert_eq!(unsigned.reason, SgReason::AuthFailure);

    let mut buf = [0u8; SG_SIGNED_LEN];
    let mut n = 0;
    let p = packet_on_road("H0-0", 30.0, 4000);
    assert_eq!(unsafe { sg_packet_sign(keys, &p, buf.as_mut_ptr(), buf.len(), &mut n) }, SgStatus::Ok);
    assert_eq!(n, SG_SIGNED_LEN);
    let signed = process(&buf[..n]);
    assert!(!signed.flagged);
    assert_eq!(signed.auth_remaining, 9);

    unsafe {
        sg_keys_free(keys);
        sg_detector_free(det);
    }
}

#[test]
fn process_errors() {
    let g = grid_handle();
    let keys = sg_keys_new();
    let mut det = ptr::null_mut();
    assert_eq!(unsafe { sg_detector_new(g, keys, 10, &mut det) }, SgStatus::Ok);
    let mut o = std::mem::MaybeUninit::<SgOutcome>::uninit();
    let bytes = serialize(&packet_on_road("H0-0", 20.0, 0));
    let st = unsafe { sg_detector_process(det, bytes.as_ptr(), bytes.len(), o.as_mut_ptr()) };
    assert_eq!(st, SgStatus::UnknownVehicle);
    let st = unsafe { sg_detector_process(det, bytes.as_ptr(), 10, o.as_mut_ptr()) };
    assert_eq!(st, SgStatus::Malformed);
    assert!(!last_error().is_empty());
    unsafe {
        sg_detector_free(det);
        sg_keys_free(keys);
        sg_graph_free(g);
    }
}

#[test]
fn buffer_too_small_reports_needed_size() {
    let p = packet_on_road("H0-0", 20.0, 0);
    let mut buf = [0u8; 8];
    let mut n = 0;
    assert_eq!(unsafe { sg_packet_serialize(&p, buf.as_mut_ptr(), buf.len(), &mut n) }, SgStatus::BufferTooSmall);
    assert_eq!(n, SG_UNSIGNED_LEN);
}

#[test]
fn inserted_key_signs() {
    let keys = sg_keys_new();
    let key = [3u8; SG_KEY_LEN];
    assert_eq!(unsafe { sg_keys_insert(keys, 7, key.as_ptr()) }, SgStatus::Ok);
    let p = packet_on_road("H0-0", 20.0, 0);
    let mut buf = [0u8; SG_SIGNED_LEN];
    let mut n = 0;
    assert_eq!(unsafe { sg_packet_sign(keys, &p, buf.as_mut_ptr(), buf.len(), &mut n) }, SgStatus::Ok);
    let other = SgPacket { vehicle_id: 8, ..p };
    assert_eq!(
        unsafe { sg_packet_sign(keys, &other, buf.as_mut_ptr(), buf.len(), &mut n) },
        SgStatus::UnknownVehicle
    );
    unsafe { sg_keys_free(keys) };
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(sg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spoofguard.h")).unwrap();
    for name in [
        "sg_graph_load",
        "sg_detector_process",
        "sg_packet_sign",
        "sg_last_error_message",
        "SG_STATUS_BUFFER_TOO_SMALL",
        "#define SG_SIGNED_LEN 105",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/spoofguard.h");
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
}

#[test]
fn c_demo_links_and_runs() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    // Test binaries live in target/<profile>/deps; the static library one level up.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libspoofguard_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let out = std::env::temp_dir().join(format!("spoofguard_demo_{}", std::process::id()));
    let status = std::process::Command::new("cc")
        .arg("-std=c99")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("examples/demo.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let map = manifest.join("../core/maps/grid5x5.json");
    let run = std::process::Command::new(&out).arg(map).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8(run.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "junctions 25 roads 40");
    assert!(lines[2].contains("flagged=0"), "{text}");
    assert!(lines[3].contains("flagged=1") && lines[3].ends_with("auth_remaining=10"), "{text}");
}
