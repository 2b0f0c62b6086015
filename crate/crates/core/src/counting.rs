//! Single-pass counting sort into pre-reserved lanes.
//!
//! Every possible key value gets a lane able to hold `stride` records, all
//! inside one reserved region. Records are appended at their lane's cursor,
//! so the input is read exactly once and no histogram pass is needed. Only
//! the pages actually written are ever committed.

use crate::error::SortError;
use crate::item::RadixItem;
use crate::reservoir::{page_size, ReservedRegion};
use crate::staging::{detect_store_mode, StagingBufferSet, LINE_BYTES};

/// Bytes a scatter wrote, and how many of those went out as streaming lines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassBytes {
    pub written: u64,
    pub streamed: u64,
}

impl std::ops::AddAssign for PassBytes {
    fn add_assign(&mut self, rhs: Self) {
        self.written += rhs.written;
        self.streamed += rhs.streamed;
    }
}

/// `lanes` equally sized output lanes inside one reserved region.
///
/// Lane `i` occupies record slots `[i * stride, (i + 1) * stride)`; its
/// cursor is the slot of the next record to be written.
pub struct LaneSet<T: RadixItem> {
    region: ReservedRegion,
    base: *mut T,
    lanes: usize,
    stride: usize,
    next: Vec<usize>,
}

// SAFETY: lane memory is only written through &mut self; &self hands out
// read-only slices of the already written prefix of each lane.
unsafe impl<T: RadixItem> Send for LaneSet<T> {}
unsafe impl<T: RadixItem> Sync for LaneSet<T> {}

/// Smallest stride >= `stride` that keeps every lane start line-aligned.
pub fn aligned_stride<T: RadixItem>(stride: usize) -> usize {
    let per_line = LINE_BYTES / T::BYTES;
    stride.max(1).next_multiple_of(per_line)
}

impl<T: RadixItem> LaneSet<T> {
    /// Reserves `lanes` lanes of at least `stride` records each. The stride
    /// is rounded up so that lane starts fall on cache-line boundaries.
    pub fn new(lanes: usize, stride: usize) -> Result<Self, SortError> {
        if lanes == 0 {
            return Err(SortError::Config("lane count must be positive".into()));
        }
        let stride = aligned_stride::<T>(stride);
        let bytes = lanes
            .checked_mul(stride)
            .and_then(|s| s.checked_mul(T::BYTES))
            .ok_or_else(|| SortError::Config(format!("{lanes} lanes of {stride} overflow")))?;
        let region = ReservedRegion::reserve(bytes, false)?;
        let base = region.base()?.as_ptr().cast::<T>();
        Ok(Self {
            region,
            base,
            lanes,
            stride,
            next: (0..lanes).map(|i| i * stride).collect(),
        })
    }

    pub fn lane_count(&self) -> usize {
        self.lanes
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Address space claimed by the lanes themselves: `lanes * stride * item size`.
    pub fn lane_bytes(&self) -> usize {
        self.lanes * self.stride * T::BYTES
    }

    pub fn region(&self) -> &ReservedRegion {
        &self.region
    }

    pub fn committed_bytes(&self) -> usize {
        self.region.committed_bytes().unwrap_or(0)
    }

    /// Write cursors, as record indices from the start of the region.
    pub fn cursors(&self) -> &[usize] {
        &self.next
    }

    #[inline]
    pub fn len(&self, lane: usize) -> usize {
        self.next[lane] - lane * self.stride
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.lanes).map(|l| self.len(l)).collect()
    }

    pub fn total_len(&self) -> usize {
        (0..self.lanes).map(|l| self.len(l)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    #[inline]
    pub fn lane(&self, lane: usize) -> &[T] {
        let start = lane * self.stride;
        // SAFETY: slots [start, next[lane]) have been written by scatter.
        unsafe { std::slice::from_raw_parts(self.base.add(start), self.next[lane] - start) }
    }

    /// Empties every lane without releasing committed pages.
    pub fn reset(&mut self) {
        for (i, n) in self.next.iter_mut().enumerate() {
            *n = i * self.stride;
        }
    }

    /// Touches the page holding each lane's first new record, for lanes that
    /// grew since `starts`. Writes that begin a page are touched as they
    /// happen, so together every written page is counted.
    fn touch_start_pages(&self, starts: &[usize]) {
        let mask = page_size() - 1;
        for (&start, &next) in starts.iter().zip(&self.next) {
            let off = start * T::BYTES;
            if next > start && off & mask != 0 {
                self.region.touch_within_page(off);
            }
        }
    }

    /// Appends every item to lane `key_of(item)`.
    ///
    /// With `staging`, writes go through the software write-combining
    /// buffers, which are drained and fenced before returning. `checked`
    /// enables the per-record overflow test; callers may skip it only when
    /// no lane can receive more than `stride` records.
    pub fn scatter<I, F>(
        &mut self,
        items: I,
        key_of: F,
        staging: Option<&mut StagingBufferSet>,
        checked: bool,
    ) -> Result<PassBytes, SortError>
    where
        I: IntoIterator<Item = T>,
        F: FnMut(&T) -> usize,
    {
        let starts = self.next.clone();
        let result = match (staging, checked) {
            (None, false) => self.scatter_direct::<_, _, false>(items, key_of),
            (None, true) => self.scatter_direct::<_, _, true>(items, key_of),
            (Some(s), false) => self.scatter_staged::<_, _, false>(items, key_of, s),
            (Some(s), true) => self.scatter_staged::<_, _, true>(items, key_of, s),
        };
        self.touch_start_pages(&starts);
        result
    }

    fn scatter_direct<I, F, const CHECKED: bool>(
        &mut self,
        items: I,
        mut key_of: F,
    ) -> Result<PassBytes, SortError>
    where
        I: IntoIterator<Item = T>,
        F: FnMut(&T) -> usize,
    {
        let mask = page_size() - 1;
        let mut written = 0u64;
        for item in items {
            let lane = key_of(&item);
            debug_assert!(lane < self.lanes, "key {lane} outside {} lanes", self.lanes);
            let slot = self.next[lane];
            if CHECKED && slot == (lane + 1) * self.stride {
                return Err(SortError::LaneOverflow {
                    lane,
                    stride: self.stride,
                });
            }
            let off = slot * T::BYTES;
            if off & mask == 0 {
                self.region.touch_within_page(off);
            }
            // SAFETY: slot lies inside lane `lane`, inside the reservation.
            unsafe { self.base.add(slot).write(item) };
            self.next[lane] = slot + 1;
            written += T::BYTES as u64;
        }
        Ok(PassBytes {
            written,
            streamed: 0,
        })
    }

    fn scatter_staged<I, F, const CHECKED: bool>(
        &mut self,
        items: I,
        mut key_of: F,
        staging: &mut StagingBufferSet,
    ) -> Result<PassBytes, SortError>
    where
        I: IntoIterator<Item = T>,
        F: FnMut(&T) -> usize,
    {
        assert!(staging.lane_count() >= self.lanes);
        let base = self.base as usize;
        for (lane, &slot) in self.next.iter().enumerate() {
            staging.set_cursor(lane, (base + slot * T::BYTES) as *mut u8);
        }
        staging.take_counters();
        let mask = page_size() - 1;
        let lane_bytes = self.stride * T::BYTES;
        let mut result = Ok(());
        for item in items {
            let lane = key_of(&item);
            assert!(lane < self.lanes, "key {lane} outside {} lanes", self.lanes);
            if CHECKED && staging.cursor(lane) as usize == base + (lane + 1) * lane_bytes {
                result = Err(SortError::LaneOverflow {
                    lane,
                    stride: self.stride,
                });
                break;
            }
            // SAFETY: the cursor stays within the lane (stride bound), and the
            // lane start is line-aligned.
            if unsafe { staging.stage(lane, item) } {
                let line = staging.cursor(lane) as usize - LINE_BYTES - base;
                if line & mask == 0 {
                    self.region.touch_within_page(line);
                }
            }
        }
        for lane in 0..self.lanes {
            let fill = staging.fill(lane);
            let end = staging.cursor(lane) as usize - base;
            if fill > 0 {
                let first = end - fill * T::BYTES;
                self.region.touch(first, fill * T::BYTES)?;
            }
            self.next[lane] = end / T::BYTES;
        }
        // SAFETY: same destinations as above.
        unsafe { staging.drain::<T>() };
        staging.fence();
        let (streamed, plain) = staging.take_counters();
        result.map(|()| PassBytes {
            written: streamed + plain,
            streamed,
        })
    }
}

impl<T: RadixItem> std::fmt::Debug for LaneSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LaneSet")
            .field("lanes", &self.lanes)
            .field("stride", &self.stride)
            .field("total_len", &self.total_len())
            .field("region", &self.region)
            .finish()
    }
}

/// Sorts `items` into `lanes` lanes by `key_of` in a single pass.
///
/// `stride` bounds the population of any lane; passing the item count is
/// always safe. With a smaller stride an overfull lane is reported as
/// [`SortError::LaneOverflow`].
pub fn counting_sort<T, I, F>(
    items: I,
    key_of: F,
    lanes: usize,
    stride: usize,
    use_wc: bool,
) -> Result<LaneSet<T>, SortError>
where
    T: RadixItem,
    I: IntoIterator<Item = T>,
    F: FnMut(&T) -> usize,
{
    let items = items.into_iter();
    let mut set = LaneSet::new(lanes, stride)?;
    // Without a length the iterator may exceed the stride; check every record.
    let checked = match items.size_hint() {
        (_, Some(upper)) => upper > set.stride(),
        (_, None) => true,
    };
    let mut staging = use_wc.then(|| StagingBufferSet::new(lanes, detect_store_mode()));
    set.scatter(items, key_of, staging.as_mut(), checked)?;
    Ok(set)
}

/// Copies all lanes, in lane order, to the front of `out`. Returns the count.
///
/// # Panics
///
/// If `out` is shorter than the total lane population.
pub fn concatenate<T: RadixItem>(lanes: &LaneSet<T>, out: &mut [T]) -> usize {
    let total = lanes.total_len();
    assert!(out.len() >= total, "output holds {} of {total} items", out.len());
    let mut at = 0;
    for lane in 0..lanes.lane_count() {
        let src = lanes.lane(lane);
        out[at..at + src.len()].copy_from_slice(src);
        at += src.len();
    }
    at
}
