//! Address-space reservation with lazily committed pages.
//!
//! A [`ReservedRegion`] claims a (possibly enormous) range of virtual addresses
//! without attaching physical memory. Pages are backed by the OS on first write.
//! The region keeps its own commit accounting: callers report the byte ranges
//! they write through [`ReservedRegion::touch`], and the region counts each
//! distinct page exactly once. That model value is what residency assertions
//! are checked against, independent of what the OS happens to report.
//!
//! On Unix the range is an anonymous `MAP_NORESERVE` mapping. Elsewhere the
//! region falls back to a single zeroed allocation and relies on overcommit.

use std::marker::PhantomData;
use std::ops::{Deref, DerefMut};
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::item::RadixItem;

/// Set this to any value other than `0` to never request large pages.
pub const NO_LARGE_PAGES_ENV: &str = "VMSORT_NO_LARGE_PAGES";

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("cannot reserve an empty region")]
    ZeroCapacity,
    #[error("address space exhausted: could not reserve {bytes} bytes ({source})")]
    ReserveFailed {
        bytes: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("large pages are unavailable ({0})")]
    LargePagesUnavailable(std::io::Error),
    #[error("a {bytes}-byte reservation exceeds the address space of this platform")]
    AddressSpaceTooSmall { bytes: usize },
    #[error("commit failed: physical memory exhausted ({0})")]
    CommitFailed(std::io::Error),
    #[error("range {offset}+{length} exceeds the {reserved} reserved bytes")]
    OutOfBounds {
        offset: usize,
        length: usize,
        reserved: usize,
    },
    #[error("region has already been released")]
    Released,
}

/// How an input buffer ended up being backed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LargePageMode {
    /// Explicit huge pages (`MAP_HUGETLB`).
    Explicit,
    /// Small-page mapping with a transparent huge page hint.
    Transparent,
    /// Large pages were requested but neither mechanism was available.
    FallbackSmall,
    /// Large pages were not requested or disabled via the environment.
    Disabled,
}

/// Small-page size of this system, queried once.
pub fn page_size() -> usize {
    static PAGE: OnceLock<usize> = OnceLock::new();
    *PAGE.get_or_init(os::page_size)
}

/// Huge page size of this system (2 MiB when it cannot be determined).
pub fn large_page_size() -> usize {
    static LARGE: OnceLock<usize> = OnceLock::new();
    *LARGE.get_or_init(|| os::large_page_size().unwrap_or(2 << 20))
}

/// True unless large pages were disabled through [`NO_LARGE_PAGES_ENV`].
pub fn large_pages_allowed() -> bool {
    match std::env::var(NO_LARGE_PAGES_ENV) {
        Ok(v) => v.is_empty() || v == "0",
        Err(_) => true,
    }
}

/// Resident set size of the current process, where the OS exposes it.
pub fn process_resident_bytes() -> Option<usize> {
    os::resident_bytes()
}

/// One bit per page, stored in a lazily backed anonymous mapping so that
/// bookkeeping for a multi-terabyte reservation costs nothing until used.
struct PageBitmap {
    words: NonNull<AtomicU64>,
    map_bytes: usize,
}

impl PageBitmap {
    fn new(pages: usize) -> Result<Self, RegionError> {
        let map_bytes = round_up(pages.div_ceil(64).max(1) * 8, page_size());
        let ptr = os::map(map_bytes, false)?;
        Ok(Self {
            words: ptr.cast(),
            map_bytes,
        })
    }

    /// Sets the bit, returning true if it was previously clear.
    #[inline(always)]
    fn set(&self, page: usize) -> bool {
        let bit = 1u64 << (page % 64);
        // SAFETY: page < pages, so the word lies inside the mapping.
        let word = unsafe { &*self.words.as_ptr().add(page / 64) };
        if word.load(Ordering::Relaxed) & bit != 0 {
            return false;
        }
        word.fetch_or(bit, Ordering::Relaxed) & bit == 0
    }
}

impl Drop for PageBitmap {
    fn drop(&mut self) {
        // SAFETY: mapping created by os::map with the same size.
        unsafe { os::unmap(self.words.cast(), self.map_bytes) };
    }
}

/// A reserved address range with per-page commit accounting.
pub struct ReservedRegion {
    base: NonNull<u8>,
    reserved_bytes: usize,
    page_bytes: usize,
    page_shift: u32,
    large_pages: bool,
    committed: AtomicUsize,
    pages: Option<PageBitmap>,
}

// SAFETY: the region owns its mapping; shared access only goes through atomic
// accounting or raw pointers whose disjointness the callers maintain.
unsafe impl Send for ReservedRegion {}
unsafe impl Sync for ReservedRegion {}

impl ReservedRegion {
    /// Reserves `capacity` bytes (rounded up to whole pages) of address space.
    ///
    /// With `large_pages` the range is backed by explicit huge pages and the
    /// call fails with [`RegionError::LargePagesUnavailable`] when the system
    /// has none configured. See [`ReservedRegion::reserve_input`] for the
    /// best-effort variant.
    pub fn reserve(capacity: usize, large_pages: bool) -> Result<Self, RegionError> {
        if capacity == 0 {
            return Err(RegionError::ZeroCapacity);
        }
        if usize::BITS < 64 && capacity > (1usize << 30) {
            return Err(RegionError::AddressSpaceTooSmall { bytes: capacity });
        }
        let page_bytes = if large_pages {
            large_page_size()
        } else {
            page_size()
        };
        let reserved_bytes = capacity
            .checked_next_multiple_of(page_bytes)
            .ok_or(RegionError::AddressSpaceTooSmall { bytes: capacity })?;
        let base = os::map(reserved_bytes, large_pages)?;
        let pages = match PageBitmap::new(reserved_bytes / page_bytes) {
            Ok(p) => p,
            Err(e) => {
                // SAFETY: just mapped with this size.
                unsafe { os::unmap(base, reserved_bytes) };
                return Err(e);
            }
        };
        Ok(Self {
            base,
            reserved_bytes,
            page_bytes,
            page_shift: page_bytes.trailing_zeros(),
            large_pages,
            committed: AtomicUsize::new(0),
            pages: Some(pages),
        })
    }

    /// Reserves a region for input data, preferring large pages when allowed.
    ///
    /// Tries explicit huge pages first, then a transparent huge page hint on
    /// a small-page mapping, and reports which one took effect.
    pub fn reserve_input(
        capacity: usize,
        want_large: bool,
    ) -> Result<(Self, LargePageMode), RegionError> {
        if !want_large || !large_pages_allowed() {
            return Ok((Self::reserve(capacity, false)?, LargePageMode::Disabled));
        }
        if free_huge_page_bytes().is_some_and(|free| free < capacity) {
            log::debug!("huge page pool too small for {capacity} bytes");
            return Self::reserve_transparent(capacity);
        }
        match Self::reserve(capacity, true) {
            Ok(region) => return Ok((region, LargePageMode::Explicit)),
            Err(RegionError::LargePagesUnavailable(e)) => {
                log::debug!("explicit huge pages unavailable: {e}");
            }
            Err(e) => return Err(e),
        }
        Self::reserve_transparent(capacity)
    }

    fn reserve_transparent(capacity: usize) -> Result<(Self, LargePageMode), RegionError> {
        let region = Self::reserve(capacity, false)?;
        let mode = if os::advise_huge(region.base, region.reserved_bytes) {
            LargePageMode::Transparent
        } else {
            LargePageMode::FallbackSmall
        };
        Ok((region, mode))
    }

    fn check_live(&self) -> Result<(), RegionError> {
        if self.pages.is_none() {
            return Err(RegionError::Released);
        }
        Ok(())
    }

    pub fn base(&self) -> Result<NonNull<u8>, RegionError> {
        self.check_live()?;
        Ok(self.base)
    }

    pub fn reserved_bytes(&self) -> usize {
        self.reserved_bytes
    }

    pub fn page_bytes(&self) -> usize {
        self.page_bytes
    }

    pub fn large_pages(&self) -> bool {
        self.large_pages
    }

    pub fn is_released(&self) -> bool {
        self.pages.is_none()
    }

    /// Records that `[offset, offset + length)` has been (or is about to be)
    /// written. Returns the number of bytes newly added to the commit count.
    pub fn touch(&self, offset: usize, length: usize) -> Result<usize, RegionError> {
        self.check_live()?;
        let end = offset.checked_add(length).filter(|&e| e <= self.reserved_bytes);
        let Some(end) = end else {
            return Err(RegionError::OutOfBounds {
                offset,
                length,
                reserved: self.reserved_bytes,
            });
        };
        if length == 0 {
            return Ok(0);
        }
        let first = offset >> self.page_shift;
        let last = (end - 1) >> self.page_shift;
        let fresh = (first..=last).filter(|&p| self.note_page(p)).count();
        let delta = fresh * self.page_bytes;
        if delta > 0 {
            self.committed.fetch_add(delta, Ordering::Relaxed);
        }
        Ok(delta)
    }

    /// Hot-path variant of [`touch`](Self::touch) for a write that lies within one page.
    #[inline(always)]
    pub(crate) fn touch_within_page(&self, offset: usize) {
        debug_assert!(offset < self.reserved_bytes);
        if self.note_page(offset >> self.page_shift) {
            self.committed.fetch_add(self.page_bytes, Ordering::Relaxed);
        }
    }

    #[inline(always)]
    fn note_page(&self, page: usize) -> bool {
        match &self.pages {
            Some(bitmap) => bitmap.set(page),
            None => false,
        }
    }

    /// Like [`touch`](Self::touch), but also asks the OS to back the pages
    /// right away so that exhaustion surfaces as [`RegionError::CommitFailed`]
    /// instead of a fault on first write.
    pub fn commit(&self, offset: usize, length: usize) -> Result<usize, RegionError> {
        let delta = self.touch(offset, length)?;
        if length > 0 {
            let start = offset & !(self.page_bytes - 1);
            let end = round_up(offset + length, self.page_bytes);
            // SAFETY: touch() validated the range against the reservation.
            let base = unsafe { NonNull::new_unchecked(self.base.as_ptr().add(start)) };
            os::populate(base, end - start)?;
        }
        Ok(delta)
    }

    /// Bytes committed according to the touch accounting.
    pub fn committed_bytes(&self) -> Result<usize, RegionError> {
        self.check_live()?;
        Ok(self.committed.load(Ordering::Relaxed))
    }

    /// Returns the range and its physical pages to the OS.
    ///
    /// A second call fails with [`RegionError::Released`].
    pub fn release(&mut self) -> Result<(), RegionError> {
        let bitmap = self.pages.take().ok_or(RegionError::Released)?;
        drop(bitmap);
        // SAFETY: mapping created in reserve() with this size, released once.
        unsafe { os::unmap(self.base, self.reserved_bytes) };
        self.committed.store(0, Ordering::Relaxed);
        Ok(())
    }
}

impl Drop for ReservedRegion {
    fn drop(&mut self) {
        if !self.is_released() {
            let _ = self.release();
        }
    }
}

impl std::fmt::Debug for ReservedRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReservedRegion")
            .field("base", &self.base)
            .field("reserved_bytes", &self.reserved_bytes)
            .field("committed_bytes", &self.committed.load(Ordering::Relaxed))
            .field("page_bytes", &self.page_bytes)
            .field("large_pages", &self.large_pages)
            .field("released", &self.is_released())
            .finish()
    }
}

/// A fixed-length array of records living in its own reserved region,
/// optionally on large pages. Used for benchmark inputs.
pub struct PageBuffer<T: RadixItem> {
    region: Option<ReservedRegion>,
    len: usize,
    mode: LargePageMode,
    _marker: PhantomData<T>,
}

impl<T: RadixItem> PageBuffer<T> {
    /// A zero-filled buffer of `len` records.
    pub fn zeroed(len: usize, want_large: bool) -> Result<Self, RegionError> {
        if len == 0 {
            let mode = if want_large {
                LargePageMode::FallbackSmall
            } else {
                LargePageMode::Disabled
            };
            return Ok(Self {
                region: None,
                len,
                mode,
                _marker: PhantomData,
            });
        }
        let bytes = len
            .checked_mul(T::BYTES)
            .ok_or(RegionError::AddressSpaceTooSmall { bytes: usize::MAX })?;
        let (mut region, mut mode) = ReservedRegion::reserve_input(bytes, want_large)?;
        match region.commit(0, bytes) {
            Ok(_) => {}
            // A huge page mapping can succeed with an empty pool and only
            // fail once populated.
            Err(e) if mode == LargePageMode::Explicit => {
                log::debug!("explicit huge pages could not be populated: {e}");
                drop(region);
                (region, mode) = ReservedRegion::reserve_transparent(bytes)?;
                region.commit(0, bytes)?;
            }
            Err(e) => return Err(e),
        }
        Ok(Self {
            region: Some(region),
            len,
            mode,
            _marker: PhantomData,
        })
    }

    pub fn from_slice(items: &[T], want_large: bool) -> Result<Self, RegionError> {
        let mut buf = Self::zeroed(items.len(), want_large)?;
        buf.copy_from_slice(items);
        Ok(buf)
    }

    pub fn large_page_mode(&self) -> LargePageMode {
        self.mode
    }
}

impl<T: RadixItem> Deref for PageBuffer<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        match &self.region {
            // SAFETY: the mapping holds len zero-initialised records and every
            // bit pattern is a valid T.
            Some(r) => unsafe { std::slice::from_raw_parts(r.base.as_ptr().cast(), self.len) },
            None => &[],
        }
    }
}

impl<T: RadixItem> DerefMut for PageBuffer<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        match &mut self.region {
            // SAFETY: as above, and &mut self guarantees exclusivity.
            Some(r) => unsafe {
                std::slice::from_raw_parts_mut(r.base.as_ptr().cast(), self.len)
            },
            None => &mut [],
        }
    }
}

/// Free bytes in the explicit huge page pool, where the OS reports it.
fn free_huge_page_bytes() -> Option<usize> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let field = |name: &str| -> Option<usize> {
        let line = info.lines().find(|l| l.starts_with(name))?;
        line[name.len()..].split_whitespace().next()?.parse().ok()
    };
    let pages = field("HugePages_Free:")?;
    let kib = field("Hugepagesize:")?;
    Some(pages * kib * 1024)
}

#[inline]
pub(crate) fn round_up(value: usize, multiple: usize) -> usize {
    value.div_ceil(multiple) * multiple
}

/// Writes one zero byte per small page of a zero-filled range.
#[cfg_attr(not(unix), allow(dead_code))]
fn prefault(base: NonNull<u8>, bytes: usize) {
    let step = page_size();
    for off in (0..bytes).step_by(step) {
        // SAFETY: caller passes a live, zero-filled mapping.
        unsafe { std::ptr::write_volatile(base.as_ptr().add(off), 0) };
    }
}

#[cfg(unix)]
mod os {
    use std::io;
    use std::ptr::{self, NonNull};

    use super::RegionError;

    pub fn page_size() -> usize {
        // SAFETY: sysconf has no preconditions.
        let v = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
        if v > 0 {
            v as usize
        } else {
            4096
        }
    }

    pub fn large_page_size() -> Option<usize> {
        let info = std::fs::read_to_string("/proc/meminfo").ok()?;
        let line = info.lines().find(|l| l.starts_with("Hugepagesize:"))?;
        let kib: usize = line.split_whitespace().nth(1)?.parse().ok()?;
        Some(kib * 1024)
    }

    pub fn resident_bytes() -> Option<usize> {
        let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
        let pages: usize = statm.split_whitespace().nth(1)?.parse().ok()?;
        Some(pages * page_size())
    }

    pub fn map(bytes: usize, large: bool) -> Result<NonNull<u8>, RegionError> {
        #[cfg(target_os = "linux")]
        let huge_flag = if large { libc::MAP_HUGETLB } else { 0 };
        #[cfg(not(target_os = "linux"))]
        let huge_flag = {
            if large {
                return Err(RegionError::LargePagesUnavailable(io::Error::from(
                    io::ErrorKind::Unsupported,
                )));
            }
            0
        };
        // SAFETY: anonymous private mapping, no fixed address.
        let ptr = unsafe {
            libc::mmap(
                ptr::null_mut(),
                bytes,
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE | huge_flag,
                -1,
                0,
            )
        };
        if ptr == libc::MAP_FAILED {
            let err = io::Error::last_os_error();
            return Err(if large {
                RegionError::LargePagesUnavailable(err)
            } else {
                RegionError::ReserveFailed { bytes, source: err }
            });
        }
        #[cfg(target_os = "linux")]
        if !large {
            // Lanes are written sparsely; a transparent huge page per lane
            // would commit 2 MiB where one small page is needed.
            // SAFETY: range was just mapped.
            unsafe { libc::madvise(ptr, bytes, libc::MADV_NOHUGEPAGE) };
        }
        Ok(NonNull::new(ptr.cast()).expect("mmap returned null"))
    }

    pub fn advise_huge(base: NonNull<u8>, bytes: usize) -> bool {
        #[cfg(target_os = "linux")]
        {
            // SAFETY: range belongs to a live mapping.
            unsafe { libc::madvise(base.as_ptr().cast(), bytes, libc::MADV_HUGEPAGE) == 0 }
        }
        #[cfg(not(target_os = "linux"))]
        {
            let _ = (base, bytes);
            false
        }
    }

    /// # Safety
    /// `base`/`bytes` must describe a mapping returned by [`map`].
    pub unsafe fn unmap(base: NonNull<u8>, bytes: usize) {
        let rc = libc::munmap(base.as_ptr().cast(), bytes);
        debug_assert_eq!(rc, 0, "munmap failed: {}", io::Error::last_os_error());
    }

    /// Eagerly backs the range with physical pages.
    pub fn populate(base: NonNull<u8>, bytes: usize) -> Result<(), RegionError> {
        #[cfg(target_os = "linux")]
        {
            // SAFETY: range belongs to a live mapping.
            let rc = unsafe {
                libc::madvise(base.as_ptr().cast(), bytes, libc::MADV_POPULATE_WRITE)
            };
            if rc == 0 {
                return Ok(());
            }
            let err = io::Error::last_os_error();
            if err.raw_os_error() != Some(libc::EINVAL) {
                return Err(RegionError::CommitFailed(err));
            }
        }
        super::prefault(base, bytes);
        Ok(())
    }
}

#[cfg(not(unix))]
mod os {
    //! One-shot zeroed allocation; relies on the OS to overcommit.
    use std::alloc::{alloc_zeroed, dealloc, Layout};
    use std::io;
    use std::ptr::NonNull;

    use super::RegionError;

    pub fn page_size() -> usize {
        4096
    }

    pub fn large_page_size() -> Option<usize> {
        None
    }

    pub fn resident_bytes() -> Option<usize> {
        None
    }

    pub fn map(bytes: usize, large: bool) -> Result<NonNull<u8>, RegionError> {
        if large {
            return Err(RegionError::LargePagesUnavailable(io::Error::from(
                io::ErrorKind::Unsupported,
            )));
        }
        let layout = Layout::from_size_align(bytes, page_size())
            .map_err(|_| RegionError::AddressSpaceTooSmall { bytes })?;
        // SAFETY: non-zero size.
        NonNull::new(unsafe { alloc_zeroed(layout) }).ok_or(RegionError::ReserveFailed {
            bytes,
            source: io::Error::from(io::ErrorKind::OutOfMemory),
        })
    }

    pub fn advise_huge(_base: NonNull<u8>, _bytes: usize) -> bool {
        false
    }

    pub fn populate(_base: NonNull<u8>, _bytes: usize) -> Result<(), RegionError> {
        // Allocation above was already backed in one shot.
        Ok(())
    }

    pub unsafe fn unmap(base: NonNull<u8>, bytes: usize) {
        dealloc(base.as_ptr(), Layout::from_size_align_unchecked(bytes, page_size()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    #[test]
    fn fresh_region_has_nothing_committed() {
        let region = ReservedRegion::reserve(1, false).unwrap();
        assert_eq!(region.committed_bytes().unwrap(), 0);
        assert_eq!(region.reserved_bytes(), page_size());
        assert_eq!(region.base().unwrap().as_ptr() as usize % page_size(), 0);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(matches!(
            ReservedRegion::reserve(0, false),
            Err(RegionError::ZeroCapacity)
        ));
    }

    #[test]
    fn one_byte_commits_one_page_and_is_idempotent() {
        let region = ReservedRegion::reserve(16 * page_size(), false).unwrap();
        assert_eq!(region.touch(0, 1).unwrap(), page_size());
        assert_eq!(region.touch(0, 1).unwrap(), 0);
        assert_eq!(region.committed_bytes().unwrap(), page_size());
    }

    #[test]
    fn touch_rounds_to_covering_pages() {
        let page = page_size();
        let region = ReservedRegion::reserve(16 * page, false).unwrap();
        // 3 full pages plus one byte spill into a fourth.
        assert_eq!(region.touch(0, 3 * page + 1).unwrap(), 4 * page);
        // Unaligned range straddling pages 5 and 6.
        assert_eq!(region.touch(6 * page - 1, 2).unwrap(), 2 * page);
    }

    #[test]
    fn touch_out_of_bounds_is_an_error() {
        let page = page_size();
        let region = ReservedRegion::reserve(page, false).unwrap();
        assert!(matches!(
            region.touch(page - 1, 2),
            Err(RegionError::OutOfBounds { .. })
        ));
        assert!(matches!(
            region.touch(usize::MAX, 2),
            Err(RegionError::OutOfBounds { .. })
        ));
        assert_eq!(region.touch(page, 0).unwrap(), 0);
    }

    #[test]
    fn full_touch_commits_everything() {
        let region = ReservedRegion::reserve(10 * page_size() + 7, false).unwrap();
        region.touch(0, region.reserved_bytes()).unwrap();
        assert_eq!(region.committed_bytes().unwrap(), region.reserved_bytes());
    }

    #[test]
    fn use_after_release_is_rejected() {
        let mut region = ReservedRegion::reserve(page_size(), false).unwrap();
        region.release().unwrap();
        assert!(matches!(region.committed_bytes(), Err(RegionError::Released)));
        assert!(matches!(region.touch(0, 1), Err(RegionError::Released)));
        assert!(matches!(region.base(), Err(RegionError::Released)));
        assert!(matches!(region.release(), Err(RegionError::Released)));
    }

    #[test]
    fn huge_reservation_succeeds_on_64_bit() {
        if usize::BITS < 64 {
            return;
        }
        let region = ReservedRegion::reserve(64 << 30, false).unwrap();
        assert_eq!(region.reserved_bytes(), 64 << 30);
        assert_eq!(region.committed_bytes().unwrap(), 0);
    }

    #[test]
    fn large_page_request_reports_mode() {
        let (region, mode) = ReservedRegion::reserve_input(3 << 20, true).unwrap();
        match mode {
            LargePageMode::Explicit => assert!(region.large_pages()),
            _ => assert!(!region.large_pages()),
        }
    }

    #[test]
    fn page_buffer_round_trips() {
        let data: Vec<u32> = (0..10_000).map(|i| i * 7).collect();
        let buf = PageBuffer::from_slice(&data, false).unwrap();
        assert_eq!(&buf[..], &data[..]);
        let empty = PageBuffer::<u32>::zeroed(0, true).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn concurrent_touches_count_each_page_once() {
        let page = page_size();
        let region = ReservedRegion::reserve(256 * page, false).unwrap();
        std::thread::scope(|s| {
            for t in 0..4 {
                let region = &region;
                s.spawn(move || {
                    for p in 0..256 {
                        region.touch(p * page + t * 8, 8).unwrap();
                    }
                });
            }
        });
        assert_eq!(region.committed_bytes().unwrap(), 256 * page);
    }

    proptest! {
        #[test]
        fn commit_accounting_matches_set_model(
            ranges in prop::collection::vec((0usize..64, 0usize..5), 0..40)
        ) {
            let page = page_size();
            let region = ReservedRegion::reserve(72 * page, false).unwrap();
            let mut model = BTreeSet::new();
            for (start_page, span) in ranges {
                let offset = start_page * page + (start_page * 13) % page;
                let length = span * page / 2 + 1;
                region.touch(offset, length).unwrap();
                for p in offset / page..=(offset + length - 1) / page {
                    model.insert(p);
                }
                // SAFETY: range lies within the reservation.
                unsafe {
                    let p = region.base().unwrap().as_ptr().add(offset);
                    p.write(start_page as u8);
                    prop_assert_eq!(p.read(), start_page as u8);
                }
            }
            prop_assert_eq!(region.committed_bytes().unwrap(), model.len() * page);
        }
    }
}
