//! Parallel reverse radix sort.
//!
//! Keys are split into four digits. Each worker first partitions its slice
//! of the input by the most significant digit into private lanes. After a
//! barrier the bucket sizes are summed over workers and prefix-summed into
//! global output offsets, and every worker takes a contiguous block of MSD
//! values. For each MSD value it owns, a worker gathers that bucket from all
//! workers (in worker order, which keeps the sort stable), runs LSD passes
//! on digits 0 and 1 while counting digit 2, and finally scatters by digit 2
//! straight into the output.
//!
//! All lane storage is reserved address space (three lane sets per worker,
//! each `2^D` lanes of `stride` records), committed only where written.

use std::ops::Range;
use std::sync::{Barrier, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::counting::{aligned_stride, LaneSet, PassBytes};
use crate::error::SortError;
use crate::item::{KeyValue, RadixItem};
use crate::reservoir::{page_size, LargePageMode};
use crate::staging::{detect_store_mode, StagingBufferSet, StoreMode};
use crate::verify::Verdict;

/// Number of digit passes; the pipeline is built around exactly four.
pub const PASSES: u32 = 4;
/// Pass index of the most significant digit.
pub const MSD_PASS: u32 = PASSES - 1;

/// Byte `pass` of a 32-bit key (pass 0 is the least significant).
#[inline(always)]
pub fn digit<T: RadixItem>(item: &T, pass: u32) -> u8 {
    debug_assert!(pass < PASSES);
    (item.key() >> (8 * pass)) as u8
}

/// Per-lane capacity policy for the lane sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StridePolicy {
    /// Every lane can hold the whole input; overflow is impossible.
    Full,
    /// Lanes sized for a uniform key distribution, times `slack`. Skewed
    /// inputs fail with [`SortError::LaneOverflow`].
    ExpectedUniform { slack: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadixConfig {
    /// Significant key bits. 32 normally; 16 for the reduced-width mode.
    pub key_bits: u32,
    /// Bits per digit; `key_bits / digit_bits` must be 4.
    pub digit_bits: u32,
    /// Worker (processing element) count.
    pub threads: usize,
    pub stride: StridePolicy,
    /// Route scatter writes through software write-combining buffers.
    pub use_wc: bool,
    /// How full staging lines are flushed when `use_wc` is set.
    pub store_mode: StoreMode,
    /// Pin worker `i` to the `i`-th allowed CPU.
    pub pin_threads: bool,
}

impl RadixConfig {
    pub fn new(threads: usize) -> Self {
        Self {
            key_bits: 32,
            digit_bits: 8,
            threads,
            stride: StridePolicy::Full,
            use_wc: true,
            store_mode: detect_store_mode(),
            pin_threads: true,
        }
    }

    /// 16-bit keys in four 4-bit digits; used to check the pipeline exhaustively.
    pub fn reduced_width(threads: usize) -> Self {
        Self {
            key_bits: 16,
            digit_bits: 4,
            ..Self::new(threads)
        }
    }

    pub fn with_wc(mut self, use_wc: bool) -> Self {
        self.use_wc = use_wc;
        self
    }

    pub fn with_stride(mut self, stride: StridePolicy) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_store_mode(mut self, mode: StoreMode) -> Self {
        self.store_mode = mode;
        self
    }

    pub fn lanes(&self) -> usize {
        1 << self.digit_bits
    }

    pub fn validate(&self) -> Result<(), SortError> {
        let bad = |msg: String| Err(SortError::Config(msg));
        if self.threads == 0 {
            return bad("at least one worker is required".into());
        }
        if self.digit_bits == 0 || self.digit_bits > 8 {
            return bad(format!("digit width {} not in 1..=8", self.digit_bits));
        }
        if self.key_bits > 32 || self.key_bits != PASSES * self.digit_bits {
            return bad(format!(
                "{} key bits do not split into {PASSES} digits of {}",
                self.key_bits, self.digit_bits
            ));
        }
        if let StridePolicy::ExpectedUniform { slack } = self.stride {
            if !(slack >= 1.0 && slack.is_finite()) {
                return bad(format!("stride slack {slack} must be finite and >= 1"));
            }
        }
        Ok(())
    }

    /// Digit `pass` of `key` under this configuration.
    #[inline(always)]
    pub fn digit(&self, key: u32, pass: u32) -> usize {
        ((key >> (self.digit_bits * pass)) as usize) & (self.lanes() - 1)
    }

    /// Requested lane capacity for an input of `n` records.
    pub fn stride_for(&self, n: usize) -> usize {
        match self.stride {
            StridePolicy::Full => n,
            StridePolicy::ExpectedUniform { slack } => {
                ((n as f64 / self.lanes() as f64) * slack).ceil() as usize
            }
        }
    }

    /// Address space all lane sets of one sort reserve:
    /// three sets of `2^D` lanes per worker.
    pub fn reserved_lane_bytes(&self, n: usize, item_bytes: usize) -> usize {
        let stride = match item_bytes {
            4 => aligned_stride::<u32>(self.stride_for(n)),
            _ => aligned_stride::<KeyValue>(self.stride_for(n)),
        };
        3 * self.lanes() * self.threads * stride * item_bytes
    }
}

/// Global bucket sizes, output offsets, and the MSD ranges each worker owns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalPlan {
    pub bucket_sizes: Vec<usize>,
    /// Exclusive prefix sum of `bucket_sizes`.
    pub output_indices: Vec<usize>,
    /// Contiguous, disjoint MSD ranges covering all values, one per worker.
    pub assignment: Vec<Range<usize>>,
}

impl GlobalPlan {
    pub fn total(&self) -> usize {
        self.bucket_sizes.iter().sum()
    }

    /// Items worker `pe` will place.
    pub fn load(&self, pe: usize) -> usize {
        self.bucket_sizes[self.assignment[pe].clone()].iter().sum()
    }
}

/// Sums per-worker bucket sizes, prefix-sums them and assigns each worker a
/// contiguous block of MSD values holding roughly `N / workers` items.
///
/// A bucket goes to the worker whose share contains the bucket's midpoint,
/// which keeps blocks contiguous. A single dominant bucket still lands on
/// one worker.
pub fn build_plan(per_pe_sizes: &[Vec<usize>], workers: usize) -> GlobalPlan {
    assert!(workers > 0);
    let lanes = per_pe_sizes.first().map_or(0, Vec::len);
    let mut bucket_sizes = vec![0usize; lanes];
    for sizes in per_pe_sizes {
        assert_eq!(sizes.len(), lanes);
        for (total, &s) in bucket_sizes.iter_mut().zip(sizes) {
            *total += s;
        }
    }
    let mut output_indices = Vec::with_capacity(lanes);
    let mut sum = 0;
    for &s in &bucket_sizes {
        output_indices.push(sum);
        sum += s;
    }
    let n = sum;
    let owner = |m: usize| -> usize {
        if n == 0 {
            return 0;
        }
        let mid = output_indices[m] as u128 * 2 + bucket_sizes[m] as u128;
        ((mid * workers as u128 / (2 * n as u128)) as usize).min(workers - 1)
    };
    let mut assignment = vec![0..0; workers];
    let mut start = 0;
    for (pe, range) in assignment.iter_mut().enumerate() {
        let mut end = start;
        while end < lanes && owner(end) <= pe {
            end += 1;
        }
        if pe == workers - 1 {
            end = lanes;
        }
        *range = start..end;
        start = end;
    }
    GlobalPlan {
        bucket_sizes,
        output_indices,
        assignment,
    }
}

/// Traffic of one scatter pass, summed over workers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassTraffic {
    pub pass: String,
    pub bytes_written: u64,
    /// Portion of `bytes_written` that went out as full streaming lines.
    pub streamed_bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpan {
    /// Seconds since the sort was entered.
    pub start: f64,
    pub finish: f64,
}

/// Slowest worker's time in each phase, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub setup: f64,
    pub partition: f64,
    pub plan: f64,
    pub local_sort: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortReport {
    pub n: usize,
    pub item_bytes: usize,
    pub threads: usize,
    pub key_bits: u32,
    pub digit_bits: u32,
    /// Effective lane capacity in records.
    pub stride: usize,
    pub timings: PhaseTimings,
    pub worker_spans: Vec<WorkerSpan>,
    /// Items each worker placed in the final pass.
    pub worker_items: Vec<usize>,
    /// MSD partition, digit 0, digit 1, digit 2 (final).
    pub passes: Vec<PassTraffic>,
    pub bytes_written: u64,
    pub reserved_lane_bytes: usize,
    pub committed_bytes_peak: usize,
    pub page_bytes: usize,
    pub write_combining: bool,
    /// Flush mode of the staging buffers; `None` without write-combining.
    pub store_mode: Option<StoreMode>,
    pub large_pages: LargePageMode,
    pub verification: Option<Verdict>,
}

impl SortReport {
    fn empty(n: usize, item_bytes: usize, cfg: &RadixConfig) -> Self {
        Self {
            n,
            item_bytes,
            threads: cfg.threads,
            key_bits: cfg.key_bits,
            digit_bits: cfg.digit_bits,
            stride: 0,
            timings: PhaseTimings::default(),
            worker_spans: vec![],
            worker_items: vec![],
            passes: ["msd", "digit0", "digit1", "final"]
                .into_iter()
                .map(|p| PassTraffic {
                    pass: p.into(),
                    ..Default::default()
                })
                .collect(),
            bytes_written: 0,
            reserved_lane_bytes: 0,
            committed_bytes_peak: 0,
            page_bytes: page_size(),
            write_combining: cfg.use_wc,
            store_mode: cfg.use_wc.then_some(cfg.store_mode),
            large_pages: LargePageMode::Disabled,
            verification: None,
        }
    }

    /// Earliest worker start and latest worker finish, in seconds.
    pub fn span(&self) -> (f64, f64) {
        let t0 = self.worker_spans.iter().map(|s| s.start).fold(f64::INFINITY, f64::min);
        let t1 = self.worker_spans.iter().map(|s| s.finish).fold(0.0, f64::max);
        if t0.is_finite() {
            (t0, t1)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Sorts bare keys.
pub fn sort_keys(keys: &[u32], cfg: &RadixConfig) -> Result<(Vec<u32>, SortReport), SortError> {
    sort(keys, cfg)
}

/// Sorts key/value records by key, stably.
pub fn sort_records(
    records: &[KeyValue],
    cfg: &RadixConfig,
) -> Result<(Vec<KeyValue>, SortReport), SortError> {
    sort(records, cfg)
}

/// Partitions `items` by their most significant digit into fresh lanes.
pub fn msd_partition<T: RadixItem>(
    items: &[T],
    cfg: &RadixConfig,
    stride: usize,
    staging: Option<&mut StagingBufferSet>,
) -> Result<(LaneSet<T>, PassBytes), SortError> {
    let mut lanes = LaneSet::new(cfg.lanes(), stride)?;
    let bytes = partition_into(&mut lanes, items, cfg, staging)?;
    Ok((lanes, bytes))
}

fn partition_into<T: RadixItem>(
    lanes: &mut LaneSet<T>,
    items: &[T],
    cfg: &RadixConfig,
    staging: Option<&mut StagingBufferSet>,
) -> Result<PassBytes, SortError> {
    if cfg.key_bits < 32 {
        if let Some(bad) = items.iter().find(|it| it.key() >> cfg.key_bits != 0) {
            return Err(SortError::KeyOutOfRange {
                key: bad.key(),
                key_bits: cfg.key_bits,
            });
        }
    }
    let checked = items.len() > lanes.stride();
    let (shift, mask) = (cfg.digit_bits * MSD_PASS, cfg.lanes() - 1);
    lanes.scatter(
        items.iter().copied(),
        |it| (it.key() >> shift) as usize & mask,
        staging,
        checked,
    )
}

/// Per-worker buffers reused across every MSD bucket the worker owns.
pub struct LocalScratch<T: RadixItem> {
    buckets0: LaneSet<T>,
    buckets1: LaneSet<T>,
    histogram: Vec<u32>,
    staging: Option<StagingBufferSet>,
}

impl<T: RadixItem> LocalScratch<T> {
    pub fn new(cfg: &RadixConfig, stride: usize) -> Result<Self, SortError> {
        Ok(Self {
            buckets0: LaneSet::new(cfg.lanes(), stride)?,
            buckets1: LaneSet::new(cfg.lanes(), stride)?,
            histogram: vec![0; cfg.lanes()],
            staging: cfg
                .use_wc
                .then(|| StagingBufferSet::new(cfg.lanes(), cfg.store_mode)),
        })
    }

    pub fn committed_bytes(&self) -> usize {
        self.buckets0.committed_bytes() + self.buckets1.committed_bytes()
    }

    pub fn lane_bytes(&self) -> usize {
        self.buckets0.lane_bytes() + self.buckets1.lane_bytes()
    }
}

/// Raw destination for the final pass, shared by all workers. Each worker
/// writes only the output ranges of its own MSD values.
#[derive(Clone, Copy)]
pub struct OutputPtr<T>(*mut T);

// SAFETY: workers write disjoint index ranges; see local_sort.
unsafe impl<T: Send> Send for OutputPtr<T> {}
unsafe impl<T: Send> Sync for OutputPtr<T> {}

impl<T> OutputPtr<T> {
    /// # Safety
    /// `ptr` must be valid for writes of every index the plan assigns.
    pub unsafe fn new(ptr: *mut T) -> Self {
        Self(ptr)
    }
}

/// Sorts the MSD buckets in `msd_values`, gathered from every worker's
/// `buckets3`, into their final output positions. Returns traffic for the
/// digit 0, digit 1 and final passes.
///
/// # Safety
///
/// `out` must be valid for writes at every index in
/// `plan.output_indices[m] .. + plan.bucket_sizes[m]` for `m` in
/// `msd_values`, and no other thread may access those indices meanwhile.
pub unsafe fn local_sort<T: RadixItem>(
    msd_values: Range<usize>,
    buckets3: &[&LaneSet<T>],
    plan: &GlobalPlan,
    out: OutputPtr<T>,
    cfg: &RadixConfig,
    scratch: &mut LocalScratch<T>,
) -> Result<[PassBytes; 3], SortError> {
    let lanes = cfg.lanes();
    let bits = cfg.digit_bits;
    let mask = lanes - 1;
    let mut traffic = [PassBytes::default(); 3];
    let LocalScratch {
        buckets0,
        buckets1,
        histogram,
        staging,
    } = scratch;

    for m in msd_values {
        let size = plan.bucket_sizes[m];
        if size == 0 {
            continue;
        }
        let checked = size > buckets0.stride();
        buckets0.reset();
        buckets1.reset();

        // Digit 0: gather bucket m from every worker, in worker order.
        traffic[0] += buckets0.scatter(
            buckets3.iter().flat_map(|b| b.lane(m).iter().copied()),
            |it| it.key() as usize & mask,
            staging.as_mut(),
            checked,
        )?;

        // Digit 1, counting digit 2 on the way.
        histogram.fill(0);
        let hist = &mut histogram[..];
        traffic[1] += buckets1.scatter(
            (0..lanes).flat_map(|l| buckets0.lane(l).iter().copied()),
            |it| {
                hist[(it.key() >> (2 * bits)) as usize & mask] += 1;
                (it.key() >> bits) as usize & mask
            },
            staging.as_mut(),
            checked,
        )?;

        // Digit 2 straight to the output.
        let mut at = plan.output_indices[m];
        for count in histogram.iter_mut() {
            let c = *count as usize;
            *count = at as u32;
            at += c;
        }
        debug_assert_eq!(at, plan.output_indices[m] + size);
        let items = (0..lanes).flat_map(|l| buckets1.lane(l).iter().copied());
        let key_of = |it: &T| (it.key() >> (2 * bits)) as usize & mask;
        traffic[2] += match staging.as_mut() {
            Some(s) => final_scatter_staged(items, key_of, histogram, out, s),
            None => final_scatter_direct(items, key_of, histogram, out),
        };
    }
    Ok(traffic)
}

/// # Safety
/// `cursors` index valid, exclusively owned slots of `out`.
unsafe fn final_scatter_direct<T, I, F>(
    items: I,
    mut key_of: F,
    cursors: &mut [u32],
    out: OutputPtr<T>,
) -> PassBytes
where
    T: RadixItem,
    I: Iterator<Item = T>,
    F: FnMut(&T) -> usize,
{
    let mut written = 0u64;
    for item in items {
        let d = key_of(&item);
        let i = cursors[d] as usize;
        out.0.add(i).write(item);
        cursors[d] += 1;
        written += T::BYTES as u64;
    }
    PassBytes {
        written,
        streamed: 0,
    }
}

/// Final pass through the staging buffers. Output runs need not start on a
/// line boundary; the staging layer writes partial head and tail lines with
/// plain stores and streams only whole lines.
///
/// # Safety
/// As for [`final_scatter_direct`].
unsafe fn final_scatter_staged<T, I, F>(
    items: I,
    mut key_of: F,
    cursors: &[u32],
    out: OutputPtr<T>,
    staging: &mut StagingBufferSet,
) -> PassBytes
where
    T: RadixItem,
    I: Iterator<Item = T>,
    F: FnMut(&T) -> usize,
{
    for (d, &c) in cursors.iter().enumerate() {
        staging.set_cursor(d, out.0.add(c as usize).cast());
    }
    staging.take_counters();
    for item in items {
        let d = key_of(&item);
        staging.stage(d, item);
    }
    staging.drain::<T>();
    staging.fence();
    let (streamed, plain) = staging.take_counters();
    PassBytes {
        written: streamed + plain,
        streamed,
    }
}

/// First-touches one byte per page of `out[range]` so the pages are
/// allocated near the worker that writes them.
unsafe fn first_touch<T: RadixItem>(out: OutputPtr<T>, range: Range<usize>) {
    if range.is_empty() {
        return;
    }
    let page = page_size();
    let start = out.0.add(range.start) as usize;
    let end = out.0.add(range.end) as usize;
    let mut addr = start.next_multiple_of(page);
    while addr < end {
        std::ptr::write_volatile(addr as *mut u8, 0);
        addr += page;
    }
}

fn pin_current_thread(pe: usize) {
    #[cfg(target_os = "linux")]
    // SAFETY: plain libc calls on a local cpu_set_t.
    unsafe {
        let mut allowed: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut allowed) != 0 {
            return;
        }
        let cpus: Vec<usize> = (0..libc::CPU_SETSIZE as usize)
            .filter(|&c| libc::CPU_ISSET(c, &allowed))
            .collect();
        if cpus.is_empty() {
            return;
        }
        let mut mine: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpus[pe % cpus.len()], &mut mine);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mine);
    }
    #[cfg(not(target_os = "linux"))]
    let _ = pe;
}

struct WorkerResult {
    span: WorkerSpan,
    setup: f64,
    partition: f64,
    plan: f64,
    local: f64,
    traffic: [PassBytes; 4],
    committed: usize,
    lane_bytes: usize,
    items: usize,
}

/// State shared between workers of one sort.
struct Shared<'a, T: RadixItem> {
    cfg: &'a RadixConfig,
    items: &'a [T],
    stride: usize,
    entered: Instant,
    out: OutputPtr<T>,
    barrier: Barrier,
    buckets3: Vec<OnceLock<LaneSet<T>>>,
    plan: OnceLock<Option<GlobalPlan>>,
    first_error: Mutex<Option<SortError>>,
}

impl<T: RadixItem> Shared<'_, T> {
    fn fail(&self, err: SortError) {
        let mut slot = self.first_error.lock().unwrap();
        slot.get_or_insert(err);
    }

    fn input_range(&self, pe: usize) -> Range<usize> {
        let (n, p) = (self.items.len(), self.cfg.threads);
        pe * n / p..(pe + 1) * n / p
    }

    /// Runs worker `pe` through both phases. Always reaches both barriers.
    fn work(&self, pe: usize) -> Option<WorkerResult> {
        let start = Instant::now();
        if self.cfg.pin_threads && self.cfg.threads > 1 {
            pin_current_thread(pe);
        }
        let p = self.cfg.threads;
        let mut traffic = [PassBytes::default(); 4];

        let setup = LaneSet::<T>::new(self.cfg.lanes(), self.stride).and_then(|b3| {
            Ok((b3, LocalScratch::<T>::new(self.cfg, self.stride)?))
        });
        let t_setup = start.elapsed().as_secs_f64();
        let t_part = Instant::now();
        let mut scratch = match setup {
            Ok((mut b3, mut scratch)) => {
                let range = self.input_range(pe);
                match partition_into(&mut b3, &self.items[range], self.cfg, scratch.staging.as_mut()) {
                    Ok(bytes) => {
                        traffic[0] = bytes;
                        let _ = self.buckets3[pe].set(b3);
                        Some(scratch)
                    }
                    Err(e) => {
                        self.fail(e);
                        None
                    }
                }
            }
            Err(e) => {
                self.fail(e);
                None
            }
        };
        let partition = t_part.elapsed().as_secs_f64();

        let t_plan = Instant::now();
        if p > 1 {
            self.barrier.wait();
        }
        if pe == 0 {
            let all: Option<Vec<Vec<usize>>> = self
                .buckets3
                .iter()
                .map(|b| b.get().map(LaneSet::lengths))
                .collect();
            let _ = self.plan.set(all.map(|sizes| build_plan(&sizes, p)));
        }
        if p > 1 {
            self.barrier.wait();
        }
        let plan_time = t_plan.elapsed().as_secs_f64();
        let plan = self.plan.get().and_then(Option::as_ref)?;
        let scratch = scratch.as_mut()?;

        let t_local = Instant::now();
        let buckets3: Vec<&LaneSet<T>> = self.buckets3.iter().filter_map(OnceLock::get).collect();
        let mine = plan.assignment[pe].clone();
        let out_range = match (mine.start < mine.end, mine.end) {
            (true, end) => plan.output_indices[mine.start]
                ..plan.output_indices[end - 1] + plan.bucket_sizes[end - 1],
            (false, _) => 0..0,
        };
        // SAFETY: the plan gives this worker exclusive use of out_range,
        // which lies inside the n-slot output allocation.
        let local = unsafe {
            first_touch(self.out, out_range.clone());
            local_sort(mine, &buckets3, plan, self.out, self.cfg, scratch)
        };
        match local {
            Ok(t) => traffic[1..].copy_from_slice(&t),
            Err(e) => {
                self.fail(e);
                return None;
            }
        }
        let local = t_local.elapsed().as_secs_f64();
        let finish = Instant::now();
        Some(WorkerResult {
            span: WorkerSpan {
                start: start.duration_since(self.entered).as_secs_f64(),
                finish: finish.duration_since(self.entered).as_secs_f64(),
            },
            setup: t_setup,
            partition,
            plan: plan_time,
            local,
            traffic,
            committed: scratch.committed_bytes()
                + self.buckets3[pe].get().map_or(0, LaneSet::committed_bytes),
            lane_bytes: scratch.lane_bytes()
                + self.buckets3[pe].get().map_or(0, LaneSet::lane_bytes),
            items: out_range.len(),
        })
    }
}

/// Stable sort of `items` by key.
pub fn sort<T: RadixItem>(items: &[T], cfg: &RadixConfig) -> Result<(Vec<T>, SortReport), SortError> {
    cfg.validate()?;
    let entered = Instant::now();
    let n = items.len();
    let mut report = SortReport::empty(n, T::BYTES, cfg);
    if n == 0 {
        return Ok((Vec::new(), report));
    }
    if u32::try_from(n).is_err() {
        return Err(SortError::Config(format!("{n} items exceed 32-bit counters")));
    }
    let stride = cfg.stride_for(n);
    let mut output: Vec<T> = Vec::with_capacity(n);
    let shared = Shared {
        cfg,
        items,
        stride,
        entered,
        // SAFETY: capacity n, and the plan covers exactly [0, n).
        out: unsafe { OutputPtr::new(output.as_mut_ptr()) },
        barrier: Barrier::new(cfg.threads),
        buckets3: (0..cfg.threads).map(|_| OnceLock::new()).collect(),
        plan: OnceLock::new(),
        first_error: Mutex::new(None),
    };

    let results: Vec<Option<WorkerResult>> = if cfg.threads == 1 {
        vec![shared.work(0)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.threads)
                .map(|pe| {
                    let shared = &shared;
                    s.spawn(move || shared.work(pe))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sort worker panicked"))
                .collect()
        })
    };
    if let Some(err) = shared.first_error.lock().unwrap().take() {
        return Err(err);
    }
    let results: Vec<WorkerResult> = results
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| SortError::Config("worker exited without a result".into()))?;
    // SAFETY: every worker succeeded, so every index in [0, n) was written
    // exactly once (the plan's ranges partition [0, n)).
    unsafe { output.set_len(n) };

    let max = |f: fn(&WorkerResult) -> f64| results.iter().map(f).fold(0.0, f64::max);
    report.stride = shared.buckets3[0].get().map_or(0, LaneSet::stride);
    report.timings = PhaseTimings {
        setup: max(|r| r.setup),
        partition: max(|r| r.partition),
        plan: max(|r| r.plan),
        local_sort: max(|r| r.local),
        total: entered.elapsed().as_secs_f64(),
    };
    report.worker_spans = results.iter().map(|r| r.span).collect();
    report.worker_items = results.iter().map(|r| r.items).collect();
    for (i, pass) in report.passes.iter_mut().enumerate() {
        pass.bytes_written = results.iter().map(|r| r.traffic[i].written).sum();
        pass.streamed_bytes = results.iter().map(|r| r.traffic[i].streamed).sum();
    }
    report.bytes_written = report.passes.iter().map(|p| p.bytes_written).sum();
    report.reserved_lane_bytes = results.iter().map(|r| r.lane_bytes).sum();
    report.committed_bytes_peak = results.iter().map(|r| r.committed).sum();
    Ok((output, report))
}
