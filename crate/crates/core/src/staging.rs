//! Software write-combining.
//!
//! Each lane stages outgoing records in its own 64-byte, line-aligned buffer.
//! A buffer slot mirrors the low bits of the destination address, so a lane's
//! buffer is full exactly when its post-incremented destination cursor is a
//! multiple of the line size. At that point the whole line goes out as one
//! burst of non-temporal stores, which never reads the destination.
//!
//! The buffers, the destination cursors and the fill counters live in one
//! contiguous, line-aligned block. For 256 lanes that block plus a 256-entry
//! histogram stays inside a 32 KiB L1 data cache, and consecutive buffers
//! fall into distinct cache sets.

use std::alloc::{self, Layout};
use std::mem::size_of;
use std::ptr::{self, NonNull};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::item::RadixItem;

pub const LINE_BYTES: usize = 64;
/// L1 data cache geometry the layout is designed against.
pub const L1_BYTES: usize = 32 * 1024;
pub const L1_WAYS: usize = 8;
pub const L1_SETS: usize = L1_BYTES / (L1_WAYS * LINE_BYTES);
/// Addresses this far apart map to the same L1 set.
pub const ALIAS_PERIOD: usize = L1_SETS * LINE_BYTES;

const _: () = assert!(L1_SETS == 64 && ALIAS_PERIOD == 4096);
const _: () = assert!(working_set_bytes(256) + 256 * size_of::<u32>() <= L1_BYTES);

/// How full lines are copied to their destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoreMode {
    /// Non-temporal stores that bypass the cache.
    Streaming,
    /// Ordinary stores.
    Plain,
}

/// Bytes occupied by the buffers, cursors and fill counters of `lanes` lanes.
pub const fn working_set_bytes(lanes: usize) -> usize {
    lanes * (LINE_BYTES + size_of::<usize>() + size_of::<u32>())
}

/// Coherency line size reported by the OS, if any.
pub fn cache_line_size() -> Option<usize> {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        // SAFETY: sysconf has no preconditions.
        let v = unsafe { libc::sysconf(libc::_SC_LEVEL1_DCACHE_LINESIZE) };
        if v > 0 {
            return Some(v as usize);
        }
    }
    #[cfg(target_os = "linux")]
    {
        std::fs::read_to_string("/sys/devices/system/cpu/cpu0/cache/index0/coherency_line_size")
            .ok()
            .and_then(|s| s.trim().parse().ok())
    }
    #[cfg(not(target_os = "linux"))]
    {
        None
    }
}

/// Best store mode this machine supports, probed once.
///
/// Streaming needs SSE2 and a 64-byte cache line; anything else downgrades to
/// plain copies.
pub fn detect_store_mode() -> StoreMode {
    static MODE: OnceLock<StoreMode> = OnceLock::new();
    *MODE.get_or_init(|| {
        if let Some(line) = cache_line_size() {
            if line != LINE_BYTES {
                log::warn!(
                    "cache line is {line} bytes, expected {LINE_BYTES}; using plain stores"
                );
                return StoreMode::Plain;
            }
        }
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("sse2") {
            return StoreMode::Streaming;
        }
        StoreMode::Plain
    })
}

/// Copies one 64-byte line from `src` to `dst`.
///
/// In [`StoreMode::Streaming`] the stores are non-temporal; the copy only
/// loads from `src` and only stores to `dst`.
///
/// # Safety
///
/// Both pointers must be valid for 64 bytes, 64-byte aligned and
/// non-overlapping.
#[inline(always)]
pub unsafe fn flush_line(src: *const u8, dst: *mut u8, mode: StoreMode) {
    debug_assert_eq!(src as usize % LINE_BYTES, 0, "unaligned staging line");
    debug_assert_eq!(dst as usize % LINE_BYTES, 0, "unaligned flush destination");
    match mode {
        #[cfg(target_arch = "x86_64")]
        StoreMode::Streaming => stream_line(src, dst),
        _ => ptr::copy_nonoverlapping(src, dst, LINE_BYTES),
    }
}

#[cfg(target_arch = "x86_64")]
#[inline(always)]
unsafe fn stream_line(src: *const u8, dst: *mut u8) {
    use std::arch::x86_64::{__m128i, _mm_load_si128, _mm_stream_si128};
    let s = src.cast::<__m128i>();
    let d = dst.cast::<__m128i>();
    let a = _mm_load_si128(s);
    let b = _mm_load_si128(s.add(1));
    let c = _mm_load_si128(s.add(2));
    let e = _mm_load_si128(s.add(3));
    _mm_stream_si128(d, a);
    _mm_stream_si128(d.add(1), b);
    _mm_stream_si128(d.add(2), c);
    _mm_stream_si128(d.add(3), e);
}

/// Orders all preceding streaming stores before later stores.
#[inline]
pub fn store_fence(mode: StoreMode) {
    match mode {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: sfence has no preconditions; SSE is baseline on x86_64.
        StoreMode::Streaming => unsafe { std::arch::x86_64::_mm_sfence() },
        _ => std::sync::atomic::fence(std::sync::atomic::Ordering::Release),
    }
}

/// Per-lane cache-line staging buffers with destination cursors.
///
/// Owned by a single worker. Cursors are absolute destination addresses; a
/// lane's staged records have not reached memory until its line fills or
/// [`drain`](Self::drain) runs.
pub struct StagingBufferSet {
    block: NonNull<u8>,
    layout: Layout,
    lanes: usize,
    mode: StoreMode,
    streamed_bytes: u64,
    plain_bytes: u64,
}

// SAFETY: the block is exclusively owned.
unsafe impl Send for StagingBufferSet {}

impl StagingBufferSet {
    pub fn new(lanes: usize, mode: StoreMode) -> Self {
        assert!(lanes > 0, "staging set needs at least one lane");
        let layout = Layout::from_size_align(working_set_bytes(lanes), LINE_BYTES)
            .expect("staging layout");
        // SAFETY: layout has non-zero size.
        let block = NonNull::new(unsafe { alloc::alloc_zeroed(layout) })
            .unwrap_or_else(|| alloc::handle_alloc_error(layout));
        Self {
            block,
            layout,
            lanes,
            mode,
            streamed_bytes: 0,
            plain_bytes: 0,
        }
    }

    pub fn lane_count(&self) -> usize {
        self.lanes
    }

    pub fn store_mode(&self) -> StoreMode {
        self.mode
    }

    #[inline(always)]
    fn line_ptr(&self, lane: usize) -> *mut u8 {
        debug_assert!(lane < self.lanes);
        // SAFETY: within the block.
        unsafe { self.block.as_ptr().add(lane * LINE_BYTES) }
    }

    #[inline(always)]
    fn cursor_ptr(&self, lane: usize) -> *mut usize {
        debug_assert!(lane < self.lanes);
        // SAFETY: the cursor array follows the lines and is usize-aligned.
        unsafe {
            self.block
                .as_ptr()
                .add(self.lanes * LINE_BYTES)
                .cast::<usize>()
                .add(lane)
        }
    }

    #[inline(always)]
    fn fill_ptr(&self, lane: usize) -> *mut u32 {
        debug_assert!(lane < self.lanes);
        // SAFETY: the fill array follows the cursors.
        unsafe {
            self.block
                .as_ptr()
                .add(self.lanes * (LINE_BYTES + size_of::<usize>()))
                .cast::<u32>()
                .add(lane)
        }
    }

    /// Points `lane` at a new destination. The lane must have been drained.
    #[inline]
    pub fn set_cursor(&mut self, lane: usize, dest: *mut u8) {
        assert_eq!(self.fill(lane), 0, "retargeting lane {lane} with staged items");
        // SAFETY: lane < lanes (checked in cursor_ptr in debug, by the assert above otherwise).
        unsafe { *self.cursor_ptr(lane) = dest as usize };
    }

    /// Next destination address of `lane` (including staged records).
    #[inline(always)]
    pub fn cursor(&self, lane: usize) -> *mut u8 {
        assert!(lane < self.lanes);
        // SAFETY: lane in range.
        unsafe { *self.cursor_ptr(lane) as *mut u8 }
    }

    /// Records currently staged for `lane`.
    #[inline]
    pub fn fill(&self, lane: usize) -> usize {
        assert!(lane < self.lanes);
        // SAFETY: lane in range.
        unsafe { *self.fill_ptr(lane) as usize }
    }

    /// Appends `item` to `lane`'s buffer and flushes the line once it is full.
    /// Returns true when a flush happened.
    ///
    /// The flushed line is `cursor(lane) - 64 .. cursor(lane)`. A line that was
    /// only partially staged (the lane started mid-line) is written with plain
    /// stores.
    ///
    /// # Safety
    ///
    /// `lane < lane_count()`, the lane's cursor must address memory valid for
    /// writes of the records staged into it, and that memory must be aligned
    /// for `T`.
    #[inline(always)]
    pub unsafe fn stage<T: RadixItem>(&mut self, lane: usize, item: T) -> bool {
        let cursor = self.cursor_ptr(lane);
        let fill = self.fill_ptr(lane);
        let line = self.line_ptr(lane);
        let pos = *cursor;
        debug_assert_eq!(pos % T::BYTES, 0);
        ptr::write(line.add(pos % LINE_BYTES).cast::<T>(), item);
        let next = pos + T::BYTES;
        *cursor = next;
        let staged = *fill + 1;
        if !next.is_multiple_of(LINE_BYTES) {
            *fill = staged;
            return false;
        }
        let dst = (next - LINE_BYTES) as *mut u8;
        if staged as usize * T::BYTES == LINE_BYTES {
            flush_line(line, dst, self.mode);
            match self.mode {
                StoreMode::Streaming => self.streamed_bytes += LINE_BYTES as u64,
                StoreMode::Plain => self.plain_bytes += LINE_BYTES as u64,
            }
        } else {
            let bytes = staged as usize * T::BYTES;
            ptr::copy_nonoverlapping(
                line.add(LINE_BYTES - bytes),
                dst.add(LINE_BYTES - bytes),
                bytes,
            );
            self.plain_bytes += bytes as u64;
        }
        *fill = 0;
        true
    }

    /// Writes every partially filled buffer to its destination with plain
    /// stores and clears the fills.
    ///
    /// # Safety
    ///
    /// Same destination requirements as [`stage`](Self::stage), with `T`
    /// being the type that was staged.
    pub unsafe fn drain<T: RadixItem>(&mut self) {
        for lane in 0..self.lanes {
            let fill = self.fill_ptr(lane);
            if *fill == 0 {
                continue;
            }
            let bytes = *fill as usize * T::BYTES;
            let pos = *self.cursor_ptr(lane);
            let slot = pos % LINE_BYTES;
            debug_assert!(slot >= bytes);
            ptr::copy_nonoverlapping(
                self.line_ptr(lane).add(slot - bytes),
                (pos - bytes) as *mut u8,
                bytes,
            );
            self.plain_bytes += bytes as u64;
            *fill = 0;
        }
    }

    /// Issues the end-of-pass store fence.
    pub fn fence(&self) {
        store_fence(self.mode);
    }

    /// Bytes written (streamed, plain) since the last call.
    pub fn take_counters(&mut self) -> (u64, u64) {
        let out = (self.streamed_bytes, self.plain_bytes);
        self.streamed_bytes = 0;
        self.plain_bytes = 0;
        out
    }

    /// Congruence diagnostics for this set's buffer addresses.
    pub fn layout_check(&self) -> LayoutDiagnostics {
        let addrs: Vec<usize> = (0..self.lanes).map(|l| self.line_ptr(l) as usize).collect();
        LayoutDiagnostics::of(&addrs)
    }

    /// Address range of the whole block.
    pub fn block_range(&self) -> std::ops::Range<usize> {
        let start = self.block.as_ptr() as usize;
        start..start + self.layout.size()
    }
}

impl Drop for StagingBufferSet {
    fn drop(&mut self) {
        // SAFETY: allocated in new() with this layout.
        unsafe { alloc::dealloc(self.block.as_ptr(), self.layout) };
    }
}

/// How a set of line buffers spreads over L1 cache sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDiagnostics {
    pub buffers: usize,
    /// Most buffers sharing one congruence class modulo [`ALIAS_PERIOD`].
    pub max_per_class: usize,
    /// Unordered buffer pairs whose addresses are congruent.
    pub conflicting_pairs: usize,
    /// Fewest congruent pairs possible for this many buffers.
    pub minimum_pairs: usize,
    /// True when the layout is worse than the minimum.
    pub aliased: bool,
}

impl LayoutDiagnostics {
    pub fn of(addrs: &[usize]) -> Self {
        let mut classes = [0usize; L1_SETS];
        for &a in addrs {
            classes[(a % ALIAS_PERIOD) / LINE_BYTES] += 1;
        }
        let pairs = |k: usize| k * k.saturating_sub(1) / 2;
        let conflicting_pairs = classes.iter().map(|&k| pairs(k)).sum();
        let (q, r) = (addrs.len() / L1_SETS, addrs.len() % L1_SETS);
        let minimum_pairs = r * pairs(q + 1) + (L1_SETS - r) * pairs(q);
        Self {
            buffers: addrs.len(),
            max_per_class: classes.iter().copied().max().unwrap_or(0),
            conflicting_pairs,
            minimum_pairs,
            aliased: conflicting_pairs > minimum_pairs,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::item::KeyValue;

    use proptest::prelude::*;

    #[repr(C, align(64))]
    #[derive(Clone, Copy)]
    pub(crate) struct Line(pub [u8; 64]);

    /// A zeroed, line-aligned scratch destination of `lines` cache lines.
    pub(crate) fn aligned_dest(lines: usize) -> Vec<Line> {
        vec![Line([0; 64]); lines]
    }

    fn kv(i: u32) -> KeyValue {
        KeyValue::new(i.wrapping_mul(0x9e37_79b9), i)
    }

    fn modes() -> [StoreMode; 2] {
        [StoreMode::Plain, detect_store_mode()]
    }

    #[test]
    fn eighth_record_flushes_a_full_line() {
        for mode in modes() {
            let mut dest = aligned_dest(2);
            let base = dest.as_mut_ptr().cast::<u8>();
            let mut set = StagingBufferSet::new(4, mode);
            set.set_cursor(2, base);
            let per_line = LINE_BYTES / KeyValue::BYTES;
            assert_eq!(per_line, 8);
            for i in 0..7 {
                assert!(!unsafe { set.stage(2, kv(i)) });
                assert_eq!(set.fill(2), i as usize + 1);
            }
            assert!(dest[0].0.iter().all(|&b| b == 0), "nothing written before the flush");
            assert!(unsafe { set.stage(2, kv(7)) });
            set.fence();
            assert_eq!(set.fill(2), 0);
            assert_eq!(set.cursor(2) as usize, base as usize + 64);
            let written: &[KeyValue] =
                unsafe { std::slice::from_raw_parts(base.cast(), 8) };
            assert_eq!(written, &(0..8).map(kv).collect::<Vec<_>>()[..]);
            let (streamed, plain) = set.take_counters();
            assert_eq!(streamed + plain, 64);
        }
    }

    #[test]
    fn interleaved_lanes_flush_independently() {
        let mut dest = aligned_dest(4);
        let base = dest.as_mut_ptr().cast::<u8>();
        let mut set = StagingBufferSet::new(2, StoreMode::Plain);
        set.set_cursor(0, base);
        set.set_cursor(1, unsafe { base.add(128) });
        let mut flushes = [vec![], vec![]];
        for i in 0..32u32 {
            let lane = (i % 2) as usize;
            if unsafe { set.stage(lane, kv(i)) } {
                flushes[lane].push(i);
            }
        }
        // Each lane receives 16 records: flushes after its 8th and 16th.
        assert_eq!(flushes[0], vec![14, 30]);
        assert_eq!(flushes[1], vec![15, 31]);
    }

    #[test]
    fn drain_of_empty_set_is_a_noop() {
        let mut set = StagingBufferSet::new(256, StoreMode::Plain);
        unsafe { set.drain::<KeyValue>() };
        assert_eq!(set.take_counters(), (0, 0));
    }

    #[test]
    fn drain_writes_exactly_the_staged_records() {
        let mut dest = aligned_dest(1);
        let base = dest.as_mut_ptr().cast::<u8>();
        let mut set = StagingBufferSet::new(8, StoreMode::Plain);
        set.set_cursor(5, base);
        for i in 0..3 {
            unsafe { set.stage(5, kv(i + 1)) };
        }
        unsafe { set.drain::<KeyValue>() };
        assert_eq!(set.fill(5), 0);
        assert_eq!(set.take_counters(), (0, 24));
        let written: &[KeyValue] = unsafe { std::slice::from_raw_parts(base.cast(), 8) };
        assert_eq!(&written[..3], &[kv(1), kv(2), kv(3)]);
        assert!(written[3..].iter().all(|r| *r == KeyValue::default()));
    }

    #[test]
    fn unaligned_lane_start_writes_partial_head_plainly() {
        let mut dest = aligned_dest(3);
        let base = dest.as_mut_ptr().cast::<u8>();
        let mut set = StagingBufferSet::new(1, detect_store_mode());
        // Start five records into the first line.
        set.set_cursor(0, unsafe { base.add(5 * 8) });
        let mut flushed_at = vec![];
        for i in 0..14u32 {
            if unsafe { set.stage(0, kv(i)) } {
                flushed_at.push(i);
            }
        }
        unsafe { set.drain::<KeyValue>() };
        set.fence();
        assert_eq!(flushed_at, vec![2, 10]);
        let written: &[KeyValue] = unsafe { std::slice::from_raw_parts(base.cast(), 24) };
        assert!(written[..5].iter().all(|r| *r == KeyValue::default()));
        assert_eq!(&written[5..19], &(0..14).map(kv).collect::<Vec<_>>()[..]);
        assert!(written[19..].iter().all(|r| *r == KeyValue::default()));
        let (streamed, plain) = set.take_counters();
        assert_eq!(streamed + plain, 14 * 8);
        // head (3 records) and tail (3 records) are always plain
        assert!(plain >= 48);
    }

    #[test]
    fn random_fills_across_256_lanes_match_direct_scatter() {
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(7);
        let lanes = 256;
        let lane_lines = 4;
        let mut staged = aligned_dest(lanes * lane_lines);
        let mut direct = aligned_dest(lanes * lane_lines);
        let sbase = staged.as_mut_ptr().cast::<u8>();
        let dbase = direct.as_mut_ptr().cast::<KeyValue>();
        let per_lane = lane_lines * 8;
        let mut set = StagingBufferSet::new(lanes, detect_store_mode());
        for l in 0..lanes {
            set.set_cursor(l, unsafe { sbase.add(l * lane_lines * 64) });
        }
        let mut counts = vec![0usize; lanes];
        for i in 0..(lanes * per_lane / 2) as u32 {
            let lane = rng.next_u32() as usize % lanes;
            if counts[lane] == per_lane {
                continue;
            }
            unsafe {
                set.stage(lane, kv(i));
                dbase.add(lane * per_lane + counts[lane]).write(kv(i));
            }
            counts[lane] += 1;
        }
        assert!(counts.iter().any(|&c| c % 8 != 0));
        unsafe { set.drain::<KeyValue>() };
        set.fence();
        for (s, d) in staged.iter().zip(&direct) {
            assert_eq!(s.0, d.0);
        }
    }

    #[test]
    fn flush_line_copies_pattern() {
        for mode in modes() {
            let mut src = aligned_dest(1);
            for (i, b) in src[0].0.iter_mut().enumerate() {
                *b = (i as u8).wrapping_mul(37) ^ 0x5a;
            }
            let mut dst = aligned_dest(1);
            unsafe { flush_line(src.as_ptr().cast(), dst.as_mut_ptr().cast(), mode) };
            store_fence(mode);
            assert_eq!(src[0].0, dst[0].0);
        }
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "unaligned flush destination")]
    fn flush_line_rejects_unaligned_destination() {
        let src = aligned_dest(1);
        let mut dst = aligned_dest(2);
        unsafe {
            flush_line(
                src.as_ptr().cast(),
                dst.as_mut_ptr().cast::<u8>().add(8),
                StoreMode::Plain,
            )
        };
    }

    #[test]
    fn contiguous_buffers_spread_over_sets() {
        let set = StagingBufferSet::new(256, StoreMode::Plain);
        let diag = set.layout_check();
        // 256 lines span 16 KiB = four 4 KiB periods.
        assert_eq!(diag.max_per_class, 4);
        assert_eq!(diag.conflicting_pairs, 64 * 6);
        assert_eq!(diag.minimum_pairs, 64 * 6);
        assert!(!diag.aliased);
    }

    #[test]
    fn four_kib_stride_is_flagged() {
        let addrs: Vec<usize> = (0..256).map(|i| 0x10_0000 + i * 4096).collect();
        let diag = LayoutDiagnostics::of(&addrs);
        assert_eq!(diag.max_per_class, 256);
        assert_eq!(diag.conflicting_pairs, 256 * 255 / 2);
        assert!(diag.aliased);
    }

    #[test]
    fn single_buffer_has_no_conflicts() {
        let set = StagingBufferSet::new(1, StoreMode::Plain);
        let diag = set.layout_check();
        assert_eq!(diag.conflicting_pairs, 0);
        assert!(!diag.aliased);
    }

    #[test]
    fn block_is_contiguous_and_fits_l1() {
        let set = StagingBufferSet::new(256, StoreMode::Plain);
        let range = set.block_range();
        assert_eq!(range.start % LINE_BYTES, 0);
        assert_eq!(range.len(), working_set_bytes(256));
        for lane in [0, 17, 255] {
            let line = set.line_ptr(lane) as usize;
            let cursor = set.cursor_ptr(lane) as usize;
            let fill = set.fill_ptr(lane) as usize;
            assert!(range.contains(&line) && range.contains(&cursor) && range.contains(&fill));
            assert_eq!(line % LINE_BYTES, 0);
        }
        assert!(working_set_bytes(256) + 1024 <= L1_BYTES);
    }

    proptest! {
        #[test]
        fn flush_iff_post_incremented_fill_divides(
            lanes_seq in prop::collection::vec(0usize..5, 0..400),
            keys_only in any::<bool>(),
        ) {
            let lanes = 5;
            let cap = 400;
            let mut staged = aligned_dest(lanes * cap * 8 / 64 + 1);
            let mut direct = aligned_dest(lanes * cap * 8 / 64 + 1);
            let mut set = StagingBufferSet::new(lanes, StoreMode::Plain);
            let size = if keys_only { 4 } else { 8 };
            let per_line = LINE_BYTES / size;
            let lane_bytes = cap * size;
            for l in 0..lanes {
                set.set_cursor(l, unsafe { staged.as_mut_ptr().cast::<u8>().add(l * lane_bytes) });
            }
            let mut counts = [0usize; 5];
            for (i, &lane) in lanes_seq.iter().enumerate() {
                let i = i as u32;
                let flushed = unsafe {
                    let d = direct.as_mut_ptr().cast::<u8>().add(lane * lane_bytes + counts[lane] * size);
                    if keys_only {
                        d.cast::<u32>().write(i);
                        set.stage(lane, i)
                    } else {
                        d.cast::<KeyValue>().write(kv(i));
                        set.stage(lane, kv(i))
                    }
                };
                counts[lane] += 1;
                prop_assert_eq!(flushed, counts[lane] % per_line == 0);
                prop_assert!(set.fill(lane) < per_line);
            }
            unsafe {
                if keys_only { set.drain::<u32>() } else { set.drain::<KeyValue>() }
            }
            for (s, d) in staged.iter().zip(&direct) {
                prop_assert_eq!(s.0, d.0);
            }
        }
    }
}
