//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attacker::AttackScenario;
use crate::geo::GeoPoint;
use crate::packets::{sign, verify, KeyTable, LocationPacket};
use crate::roadmap::{load_roadmap, RoadmapError};
use crate::simulator::{read_records, simulate_config, SimConfig, SimError, Summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Mean digest time reported for the reference deployment, ms.
pub const REFERENCE_SIGN_MS: f64 = 0.3;
/// Upper bound on the mean sign time this build is expected to meet, ms.
pub const SIGN_GATE_MS: f64 = 5.0;
pub const MIN_BENCH_ITERATIONS: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "spoofguard", version, about = "Roadmap-based GPS spoofing detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a roadmap, sample its roads and write the preprocessed cache.
    Preprocess {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the trips described by a config file through the detector.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's authentication window.
        #[arg(long)]
        t_auth: Option<u32>,
    },
    /// Like `simulate`, with the attack scenario(s) from a separate file.
    Attack {
        #[arg(long)]
        config: PathBuf,
        /// A scenario object or an array of them.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        t_auth: Option<u32>,
    },
    /// Recompute summary statistics from an outcomes CSV.
    Evaluate {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Time HMAC-SHA-512 signing and verification over random packets.
    BenchHmac {
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

impl From<RoadmapError> for Failure {
    fn from(e: RoadmapError) -> Self {
        match e {
            RoadmapError::Io(_) => Failure::usage(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Roadmap(e) => e.into(),
            SimError::Csv(_) => Failure::data(e.to_string()),
            SimError::Config(_) | SimError::Io(_) => Failure::usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Preprocess { map, out: cache } => {
            let graph = load_roadmap(&map)?;
            std::fs::write(&cache, graph.to_cache_json())
                .map_err(|e| Failure::usage(format!("cannot write {}: {e}", cache.display())))?;
            writeln!(out, "{graph}")?;
        }
        Command::Simulate { config, out_dir, seed, t_auth } => {
            let (cfg, map) = load_config(&config, seed, t_auth)?;
            simulate_to(&cfg, &map, &out_dir, out)?;
        }
        Command::Attack { config, scenario, out_dir, seed, t_auth } => {
            let (mut cfg, map) = load_config(&config, seed, t_auth)?;
            cfg.scenarios.extend(load_scenarios(&scenario)?);
            simulate_to(&cfg, &map, &out_dir, out)?;
        }
        Command::Evaluate { csv } => {
            let file = std::fs::File::open(&csv)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", csv.display())))?;
            let records = read_records(file)?;
            let summary = Summary::from_records(&records);
            writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
        }
        Command::BenchHmac { iterations, seed } => {
            if iterations < MIN_BENCH_ITERATIONS {
                return Err(Failure::usage(format!("--iterations must be at least {MIN_BENCH_ITERATIONS}")));
            }
            let report = bench_hmac(iterations, seed);
            writeln!(out, "{report}")?;
        }
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>, t_auth: Option<u32>) -> Result<(SimConfig, PathBuf), Failure> {
    let (mut cfg, map) = SimConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = t_auth {
        cfg.t_auth = t;
    }
    Ok((cfg, map))
}

fn load_scenarios(path: &Path) -> Result<Vec<AttackScenario>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|s| vec![s])
    };
    parsed.map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn simulate_to(cfg: &SimConfig, map: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let report = simulate_config(cfg, map)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json())?;
    let csv = std::fs::File::create(out_dir.join("outcomes.csv"))?;
    report.write_csv(std::io::BufWriter::new(csv))?;
    let s = &report.summary;
    writeln!(
        out,
        "packets: {}\nflagged: {}\nfalse_positives: {}\nmax_e: {}",
        s.packets,
        s.flagged,
        s.false_positives,
        s.max_e.map_or("-".to_string(), |e| format!("{e:.4}"))
    )?;
    for a in &report.attacks {
        let latency = a.detection_latency.map_or("none".to_string(), |l| l.to_string());
        writeln!(out, "attack on {}: detection_latency {latency}", a.scenario.target)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
}

impl Timing {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 { ms[n / 2] } else { (ms[n / 2 - 1] + ms[n / 2]) / 2.0 };
        let p99 = ms[((n as f64 * 0.99).ceil() as usize).clamp(1, n) - 1];
        Timing { mean_ms: ms.iter().sum::<f64>() / n as f64, median_ms: median, p99_ms: p99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub sign: Timing,
    pub verify: Timing,
    pub reference_sign_ms: f64,
    pub gate_ms: f64,
}

impl BenchReport {
    pub fn within_gate(&self) -> bool {
        self.sign.mean_ms.is_finite() && self.sign.mean_ms < self.gate_ms
    }
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "iterations: {}", self.iterations)?;
        for (name, t) in [("sign", self.sign), ("verify", self.verify)] {
            writeln!(
                f,
                "{name}: mean {:.4} ms, median {:.4} ms, p99 {:.4} ms",
                t.mean_ms, t.median_ms, t.p99_ms
            )?;
        }
        write!(
            f,
            "reference sign mean: {} ms; gate {} ms: {}",
            self.reference_sign_ms,
            self.gate_ms,
            if self.within_gate() { "pass" } else { "FAIL" }
        )
    }
}

/// Random packets for the benchmark; the same seed gives the same packets.
pub fn bench_packets(n: usize, seed: u64) -> Vec<LocationPacket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            LocationPacket::new(
                rng.gen_range(1..=1_000_000),
                GeoPoint::new(rng.gen_range(-90.0..=90.0), rng.gen_range(-180.0..=180.0)),
                rng.gen_range(0.0..360.0),
                rng.gen_range(0..=4_102_444_800_000),
            )
        })
        .collect()
}

pub fn bench_hmac(iterations: usize, seed: u64) -> BenchReport {
    let packets = bench_packets(iterations, seed);
    let keys = KeyTable::generate(packets.iter().map(|p| p.vehicle_id), seed);
    let mut sign_ms = Vec::with_capacity(iterations);
    let mut verify_ms = Vec::with_capacity(iterations);
    for p in &packets {
        let key = keys.get(p.vehicle_id).expect("key generated");
        let t0 = Instant::now();
        let signed = sign(p, key).expect("valid packet");
        sign_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        let t0 = Instant::now();
        let ok = verify(&signed, key).expect("signed packet");
        verify_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        assert!(ok);
    }
    BenchReport {
        iterations,
        sign: Timing::from_samples(sign_ms),
        verify: Timing::from_samples(verify_ms),
        reference_sign_ms: REFERENCE_SIGN_MS,
        gate_ms: SIGN_GATE_MS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("spoofguard").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["bench-hmac", "--iterations", "10"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn timing_percentiles() {
        let t = Timing::from_samples((1..=100).map(f64::from).collect());
        assert_eq!(t.median_ms, 50.5);
        assert_eq!(t.p99_ms, 99.0);
        assert_eq!(t.mean_ms, 50.5);
    }

    #[test]
    fn bench_packets_are_seeded() {
        assert_eq!(bench_packets(5, 7), bench_packets(5, 7));
        assert_ne!(bench_packets(5, 7), bench_packets(5, 8));
    }

    #[test]
    fn bench_reports_finite_means() {
        let r = bench_hmac(MIN_BENCH_ITERATIONS, 1);
        assert!(r.sign.mean_ms > 0.0 && r.sign.mean_ms.is_finite());
        assert!(r.verify.mean_ms > 0.0 && r.verify.mean_ms.is_finite());
    }
}
