//! Benchmark harness: generate, sort, verify, and measure throughput.
//!
//! Throughput is `n / (t1 - t0)`, where `t0` is the earliest start and `t1`
//! the latest finish reported by any sort worker, not the parent's wall time.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::item::{KeyValue, RadixItem};
use crate::keygen::{fill_keys, Distribution};
use crate::radix::{sort, PhaseTimings, RadixConfig, SortReport, StridePolicy};
use crate::reservoir::{page_size, PageBuffer, RegionError};
use crate::staging::{cache_line_size, detect_store_mode, StoreMode};
use crate::verify::{verify_keys, verify_records, Verdict};
use crate::SortError;

pub const SCHEMA_VERSION: u32 = 1;
/// Default input size, 64 Mi items.
pub const DEFAULT_N: usize = 64 << 20;

/// Published figures for this workload on a dual Xeon W5580 (8 cores,
/// DDR3-1066). Printed for orientation only.
pub const REFERENCE_CONTEXT: &str = "published on 2x Xeon W5580 (8 cores), n = 64 Mi: \
     keys only vm 334 M/s, vm+wc 621 M/s; with 32-bit values vm 203 M/s, vm+wc 430 M/s";

pub mod exit {
    pub const PASS: i32 = 0;
    pub const VERIFICATION_FAILED: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const RESOURCE_ERROR: i32 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    /// Radix sort with direct scatter writes.
    Vm,
    /// Radix sort with software write-combining.
    VmWc,
    /// The standard library's stable sort.
    Reference,
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vm" => Ok(Algo::Vm),
            "vmwc" | "vm+wc" | "vm-wc" => Ok(Algo::VmWc),
            "ref" | "reference" => Ok(Algo::Reference),
            _ => Err(format!("unknown algorithm `{s}` (expected vm, vmwc or ref)")),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Vm => "vm",
            Algo::VmWc => "vmwc",
            Algo::Reference => "ref",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Human,
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "human" => Ok(OutputFormat::Human),
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(format!("unknown format `{s}` (expected human, json or csv)")),
        }
    }
}

/// Parses `full` or `uniform:<slack>`.
pub fn parse_stride(s: &str) -> Result<StridePolicy, String> {
    match s.split_once(':') {
        None if s == "full" => Ok(StridePolicy::Full),
        None if s == "uniform" => Ok(StridePolicy::ExpectedUniform { slack: 2.0 }),
        Some(("uniform", slack)) => slack
            .parse::<f64>()
            .ok()
            .filter(|v| *v >= 1.0 && v.is_finite())
            .map(|slack| StridePolicy::ExpectedUniform { slack })
            .ok_or_else(|| format!("invalid stride slack `{slack}` (need a number >= 1)")),
        _ => Err(format!("unknown stride policy `{s}` (expected full or uniform:<slack>)")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub n: usize,
    /// 0 for bare keys, 32 for key/value records.
    pub value_bits: u32,
    pub algo: Algo,
    pub threads: usize,
    pub dist: Distribution,
    pub seed: u64,
    /// Measured repetitions, not counting the warm-up run.
    pub repetitions: usize,
    pub format: OutputFormat,
    pub verify: bool,
    pub stride: StridePolicy,
    pub large_pages: bool,
    pub streaming: bool,
    /// Count the warm-up run in the summary statistics.
    pub include_warmup: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            n: DEFAULT_N,
            value_bits: 0,
            algo: Algo::VmWc,
            threads: default_threads(),
            dist: Distribution::Uniform,
            seed: 1,
            repetitions: 1,
            format: OutputFormat::Human,
            verify: true,
            stride: StridePolicy::Full,
            large_pages: true,
            streaming: true,
            include_warmup: false,
        }
    }
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.value_bits != 0 && self.value_bits != 32 {
            return Err(BenchError::Config(format!(
                "value bits must be 0 or 32, not {}",
                self.value_bits
            )));
        }
        if self.repetitions == 0 {
            return Err(BenchError::Config("at least one repetition is required".into()));
        }
        if self.threads == 0 {
            return Err(BenchError::Config("at least one thread is required".into()));
        }
        if u32::try_from(self.n).is_err() {
            return Err(BenchError::Config(format!("n = {} exceeds 2^32 - 1", self.n)));
        }
        self.radix_config().validate()?;
        Ok(())
    }

    pub fn radix_config(&self) -> RadixConfig {
        let mode = if self.streaming {
            detect_store_mode()
        } else {
            StoreMode::Plain
        };
        RadixConfig::new(self.threads)
            .with_wc(self.algo == Algo::VmWc)
            .with_stride(self.stride)
            .with_store_mode(mode)
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("resource failure: {0}")]
    Resource(String),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => exit::CONFIG_ERROR,
            BenchError::Resource(_) => exit::RESOURCE_ERROR,
        }
    }
}

impl From<SortError> for BenchError {
    fn from(e: SortError) -> Self {
        if e.is_resource_failure() {
            BenchError::Resource(e.to_string())
        } else {
            BenchError::Config(e.to_string())
        }
    }
}

impl From<RegionError> for BenchError {
    fn from(e: RegionError) -> Self {
        SortError::from(e).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputResult {
    pub repetition: usize,
    pub warmup: bool,
    pub n: usize,
    pub items_per_second: f64,
    /// Earliest worker start, seconds after the sort call.
    pub t0: f64,
    /// Latest worker finish, seconds after the sort call.
    pub t1: f64,
    pub phases: PhaseTimings,
    /// Order-dependent hash of the sorted output.
    pub checksum: u64,
    pub verdict: Option<Verdict>,
    /// Absent for the reference algorithm.
    pub report: Option<SortReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub available_threads: usize,
    pub page_bytes: usize,
    pub cache_line_bytes: Option<usize>,
    pub store_mode: StoreMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub measured: usize,
    pub min_items_per_second: f64,
    pub median_items_per_second: f64,
    pub max_items_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub schema_version: u32,
    pub reference_context: String,
    pub spec: BenchSpec,
    pub host: HostInfo,
    pub results: Vec<ThroughputResult>,
    pub summary: Summary,
}

impl BenchOutcome {
    /// First failed verification, if any.
    pub fn failure(&self) -> Option<(usize, &Verdict)> {
        self.results.iter().find_map(|r| match &r.verdict {
            Some(v) if !v.passed() => Some((r.repetition, v)),
            _ => None,
        })
    }

    pub fn exit_code(&self) -> i32 {
        match self.failure() {
            Some(_) => exit::VERIFICATION_FAILED,
            None => exit::PASS,
        }
    }

    /// All repetitions produced the same output.
    pub fn checksums_agree(&self) -> bool {
        self.results.windows(2).all(|w| w[0].checksum == w[1].checksum)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        #[derive(Serialize)]
        struct Row<'a> {
            schema_version: u32,
            algo: Algo,
            n: usize,
            value_bits: u32,
            threads: usize,
            dist: String,
            seed: u64,
            repetition: usize,
            warmup: bool,
            items_per_second: f64,
            t0: f64,
            t1: f64,
            partition_s: f64,
            plan_s: f64,
            local_sort_s: f64,
            bytes_written: u64,
            streamed_bytes: u64,
            committed_bytes_peak: usize,
            reserved_lane_bytes: usize,
            checksum: String,
            verdict: &'a str,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.results {
            let report = r.report.as_ref();
            w.serialize(Row {
                schema_version: self.schema_version,
                algo: self.spec.algo,
                n: r.n,
                value_bits: self.spec.value_bits,
                threads: self.spec.threads,
                dist: self.spec.dist.to_string(),
                seed: self.spec.seed,
                repetition: r.repetition,
                warmup: r.warmup,
                items_per_second: r.items_per_second,
                t0: r.t0,
                t1: r.t1,
                partition_s: r.phases.partition,
                plan_s: r.phases.plan,
                local_sort_s: r.phases.local_sort,
                bytes_written: report.map_or(0, |x| x.bytes_written),
                streamed_bytes: report.map_or(0, |x| x.passes.iter().map(|p| p.streamed_bytes).sum()),
                committed_bytes_peak: report.map_or(0, |x| x.committed_bytes_peak),
                reserved_lane_bytes: report.map_or(0, |x| x.reserved_lane_bytes),
                checksum: format!("{:016x}", r.checksum),
                verdict: match &r.verdict {
                    None => "skipped",
                    Some(v) if v.passed() => "pass",
                    Some(_) => "fail",
                },
            })?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn to_human(&self) -> String {
        let mut s = String::new();
        let spec = &self.spec;
        let _ = writeln!(s, "reference: {}", self.reference_context);
        let _ = writeln!(
            s,
            "algo={} n={} values={} threads={} dist={} seed={} stride={:?} store={:?}",
            spec.algo,
            spec.n,
            spec.value_bits,
            spec.threads,
            spec.dist,
            spec.seed,
            spec.stride,
            self.host.store_mode,
        );
        for r in &self.results {
            let tag = if r.warmup { "warm-up" } else { "rep" };
            let _ = write!(
                s,
                "{tag} {:>2}: {:>8.1} M items/s  t1-t0 = {:.4} s",
                r.repetition,
                r.items_per_second / 1e6,
                r.t1 - r.t0
            );
            if let Some(rep) = &r.report {
                let model = 4 * rep.n as u64 * rep.item_bytes as u64;
                let streamed: u64 = rep.passes.iter().map(|p| p.streamed_bytes).sum();
                let _ = write!(
                    s,
                    "  [partition {:.4} s, local {:.4} s] written {:.1} MiB ({:.3}x model, {:.1}% streamed) committed {:.1} MiB",
                    rep.timings.partition,
                    rep.timings.local_sort,
                    rep.bytes_written as f64 / 1048576.0,
                    rep.bytes_written as f64 / model.max(1) as f64,
                    100.0 * streamed as f64 / rep.bytes_written.max(1) as f64,
                    rep.committed_bytes_peak as f64 / 1048576.0,
                );
            }
            match &r.verdict {
                Some(v) => {
                    let _ = writeln!(s, "  verify: {v}");
                }
                None => {
                    let _ = writeln!(s, "  verify: skipped");
                }
            }
        }
        let _ = writeln!(
            s,
            "summary over {} run(s): median {:.1} M items/s (min {:.1}, max {:.1})",
            self.summary.measured,
            self.summary.median_items_per_second / 1e6,
            self.summary.min_items_per_second / 1e6,
            self.summary.max_items_per_second / 1e6,
        );
        s
    }

    pub fn render(&self) -> Result<String, BenchError> {
        match self.spec.format {
            OutputFormat::Human => Ok(self.to_human()),
            OutputFormat::Json => self.to_json().map_err(|e| BenchError::Config(e.to_string())),
            OutputFormat::Csv => self.to_csv().map_err(|e| BenchError::Config(e.to_string())),
        }
    }
}

/// Item types the harness can generate, hash and verify.
pub trait BenchItem: RadixItem {
    fn make_input(spec: &BenchSpec) -> Result<PageBuffer<Self>, RegionError>;
    fn verify(output: &[Self], input: &[Self]) -> Verdict;
    fn word(&self) -> u64;
}

impl BenchItem for u32 {
    fn make_input(spec: &BenchSpec) -> Result<PageBuffer<Self>, RegionError> {
        let mut buf = PageBuffer::zeroed(spec.n, spec.large_pages)?;
        fill_keys(&mut buf, spec.dist, spec.seed);
        Ok(buf)
    }

    fn verify(output: &[Self], input: &[Self]) -> Verdict {
        verify_keys(output, input)
    }

    fn word(&self) -> u64 {
        *self as u64
    }
}

impl BenchItem for KeyValue {
    fn make_input(spec: &BenchSpec) -> Result<PageBuffer<Self>, RegionError> {
        let mut keys = vec![0u32; spec.n];
        fill_keys(&mut keys, spec.dist, spec.seed);
        let mut buf = PageBuffer::zeroed(spec.n, spec.large_pages)?;
        for (i, (slot, &k)) in buf.iter_mut().zip(&keys).enumerate() {
            *slot = KeyValue::new(k, i as u32);
        }
        Ok(buf)
    }

    fn verify(output: &[Self], input: &[Self]) -> Verdict {
        verify_records(output, input)
    }

    fn word(&self) -> u64 {
        (self.key as u64) << 32 | self.value as u64
    }
}

/// Order-dependent 64-bit hash of a sequence of records.
pub fn checksum<T: BenchItem>(items: &[T]) -> u64 {
    const K: u64 = 0x9e37_79b9_7f4a_7c15;
    let h = items.iter().fold(items.len() as u64 ^ K, |h, it| {
        (h ^ it.word()).wrapping_mul(K).rotate_left(31)
    });
    (h ^ (h >> 29)).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

fn run_once<T: BenchItem>(
    spec: &BenchSpec,
    input: &PageBuffer<T>,
    repetition: usize,
    warmup: bool,
) -> Result<ThroughputResult, BenchError> {
    let (output, report, t0, t1, phases) = match spec.algo {
        Algo::Reference => {
            let start = Instant::now();
            let mut out = input.to_vec();
            out.sort_by_key(|it| it.key());
            let t1 = start.elapsed().as_secs_f64();
            let phases = PhaseTimings {
                total: t1,
                ..Default::default()
            };
            (out, None, 0.0, t1, phases)
        }
        Algo::Vm | Algo::VmWc => {
            let (out, mut report) = sort(input, &spec.radix_config())?;
            report.large_pages = input.large_page_mode();
            let (t0, t1) = report.span();
            let phases = report.timings;
            (out, Some(report), t0, t1, phases)
        }
    };
    let verdict = spec.verify.then(|| T::verify(&output, input));
    let report = report.map(|mut r| {
        r.verification = verdict.clone();
        r
    });
    let elapsed = t1 - t0;
    Ok(ThroughputResult {
        repetition,
        warmup,
        n: spec.n,
        items_per_second: if elapsed > 0.0 {
            spec.n as f64 / elapsed
        } else {
            0.0
        },
        t0,
        t1,
        phases,
        checksum: checksum(&output),
        verdict,
        report,
    })
}

fn run_typed<T: BenchItem>(spec: &BenchSpec) -> Result<Vec<ThroughputResult>, BenchError> {
    let input = T::make_input(spec)?;
    (0..=spec.repetitions)
        .map(|rep| run_once(spec, &input, rep, rep == 0))
        .collect()
}

fn summarize(results: &[ThroughputResult], include_warmup: bool) -> Summary {
    let mut rates: Vec<f64> = results
        .iter()
        .filter(|r| include_warmup || !r.warmup)
        .map(|r| r.items_per_second)
        .collect();
    if rates.is_empty() {
        return Summary::default();
    }
    rates.sort_by(f64::total_cmp);
    let mid = rates.len() / 2;
    let median = if rates.len() % 2 == 1 {
        rates[mid]
    } else {
        (rates[mid - 1] + rates[mid]) / 2.0
    };
    Summary {
        measured: rates.len(),
        min_items_per_second: rates[0],
        median_items_per_second: median,
        max_items_per_second: rates[rates.len() - 1],
    }
}

/// Runs one warm-up and `spec.repetitions` measured sorts of the same input.
pub fn run(spec: &BenchSpec) -> Result<BenchOutcome, BenchError> {
    spec.validate()?;
    let results = match spec.value_bits {
        0 => run_typed::<u32>(spec)?,
        _ => run_typed::<KeyValue>(spec)?,
    };
    let summary = summarize(&results, spec.include_warmup);
    Ok(BenchOutcome {
        schema_version: SCHEMA_VERSION,
        reference_context: REFERENCE_CONTEXT.to_string(),
        spec: spec.clone(),
        host: HostInfo {
            available_threads: default_threads(),
            page_bytes: page_size(),
            cache_line_bytes: cache_line_size(),
            store_mode: if spec.streaming {
                detect_store_mode()
            } else {
                StoreMode::Plain
            },
        },
        results,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algo: Algo, value_bits: u32) -> BenchSpec {
        BenchSpec {
            n: 20_000,
            value_bits,
            algo,
            threads: 2,
            repetitions: 2,
            large_pages: false,
            ..Default::default()
        }
    }

    #[test]
    fn reference_always_verifies() {
        for dist in [Distribution::Uniform, Distribution::Reverse, Distribution::AllEqual] {
            let spec = BenchSpec {
                dist,
                ..small(Algo::Reference, 32)
            };
            let outcome = run(&spec).unwrap();
            assert_eq!(outcome.exit_code(), exit::PASS);
            assert_eq!(outcome.results.len(), 3);
            assert!(outcome.results[0].warmup);
        }
    }

    #[test]
    fn vm_and_vmwc_agree() {
        for bits in [0, 32] {
            let a = run(&small(Algo::Vm, bits)).unwrap();
            let b = run(&small(Algo::VmWc, bits)).unwrap();
            let r = run(&small(Algo::Reference, bits)).unwrap();
            assert!(a.checksums_agree() && b.checksums_agree());
            assert_eq!(a.results[0].checksum, b.results[0].checksum);
            assert_eq!(a.results[0].checksum, r.results[0].checksum);
            assert_eq!(b.exit_code(), exit::PASS);
        }
    }

    #[test]
    fn throughput_uses_worker_span() {
        let outcome = run(&small(Algo::VmWc, 0)).unwrap();
        for r in &outcome.results {
            let rate = r.n as f64 / (r.t1 - r.t0);
            assert!((r.items_per_second - rate).abs() <= 1e-9 * rate);
            let report = r.report.as_ref().unwrap();
            let (t0, t1) = report.span();
            assert_eq!((t0, t1), (r.t0, r.t1));
            assert!(r.t1 <= report.timings.total + 1e-9);
        }
        assert_eq!(outcome.summary.measured, 2);
    }

    #[test]
    fn warmup_can_be_included() {
        let spec = BenchSpec {
            include_warmup: true,
            ..small(Algo::Vm, 0)
        };
        assert_eq!(run(&spec).unwrap().summary.measured, 3);
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let bad = [
            BenchSpec {
                value_bits: 16,
                ..small(Algo::Vm, 0)
            },
            BenchSpec {
                repetitions: 0,
                ..small(Algo::Vm, 0)
            },
            BenchSpec {
                threads: 0,
                ..small(Algo::Vm, 0)
            },
        ];
        for spec in bad {
            assert_eq!(run(&spec).unwrap_err().exit_code(), exit::CONFIG_ERROR);
        }
    }

    #[test]
    fn overflowing_stride_is_reported() {
        let spec = BenchSpec {
            dist: Distribution::MsdSkew(1.0),
            stride: StridePolicy::ExpectedUniform { slack: 1.5 },
            ..small(Algo::VmWc, 0)
        };
        assert_eq!(run(&spec).unwrap_err().exit_code(), exit::CONFIG_ERROR);
    }

    #[test]
    fn failed_verdict_sets_exit_code() {
        let mut outcome = run(&small(Algo::Vm, 0)).unwrap();
        outcome.results[1].verdict = Some(Verdict::OutOfOrder { index: 5 });
        assert_eq!(outcome.exit_code(), exit::VERIFICATION_FAILED);
        assert_eq!(outcome.failure().unwrap().0, 1);
    }

    #[test]
    fn parses_flags() {
        assert_eq!("vm+wc".parse(), Ok(Algo::VmWc));
        assert_eq!("ref".parse(), Ok(Algo::Reference));
        assert!("quick".parse::<Algo>().is_err());
        assert_eq!(parse_stride("full"), Ok(StridePolicy::Full));
        assert_eq!(
            parse_stride("uniform:1.25"),
            Ok(StridePolicy::ExpectedUniform { slack: 1.25 })
        );
        assert!(parse_stride("uniform:0.5").is_err());
        assert!(parse_stride("half").is_err());
        assert_eq!("csv".parse(), Ok(OutputFormat::Csv));
    }

    #[test]
    fn json_round_trips_and_csv_has_a_row_per_run() {
        let outcome = run(&small(Algo::VmWc, 32)).unwrap();
        let json = outcome.to_json().unwrap();
        let back: BenchOutcome = serde_json::from_str(&json).unwrap();
        assert_eq!(back, outcome);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["schema_version"], SCHEMA_VERSION);
        for key in ["items_per_second", "t0", "t1", "phases", "report", "checksum"] {
            assert!(value["results"][0].get(key).is_some(), "missing {key}");
        }
        let csv = outcome.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + outcome.results.len());
        assert!(outcome.to_human().contains("verify: pass"));
    }
}
