//! Radix sorting of 32-bit keys (optionally with 32-bit payloads) built on
//! over-reserved virtual memory and software write-combining.
//!
//! * [`reservoir`]: address-space reservation with lazy commit and commit accounting.
//! * [`staging`]: cache-line staging buffers flushed with streaming stores.
//! * [`counting`]: single-pass counting sort into pre-reserved lanes.
//! * [`radix`]: the parallel MSD-then-LSD radix sort.
//! * [`keygen`]: WELL512 keys and test distributions.
//! * [`verify`]: order, permutation and stability checks.
//! * [`bench`]: the benchmark harness behind the `vmsort-bench` binary.

pub mod bench;
pub mod counting;
mod error;
pub mod item;
pub mod keygen;
pub mod radix;
pub mod reservoir;
pub mod staging;
pub mod verify;

pub use counting::{concatenate, counting_sort, LaneSet};
pub use error::SortError;
pub use item::{KeyValue, RadixItem};
pub use radix::{sort, sort_keys, sort_records, RadixConfig, SortReport, StridePolicy};
pub use reservoir::{ReservedRegion, RegionError};
pub use staging::{StagingBufferSet, StoreMode};
pub use verify::Verdict;
