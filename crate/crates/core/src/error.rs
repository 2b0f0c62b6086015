use thiserror::Error;

use crate::reservoir::RegionError;

#[derive(Debug, Error)]
pub enum SortError {
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("lane {lane} overflowed its capacity of {stride} items")]
    LaneOverflow { lane: usize, stride: usize },
    #[error("key {key:#x} does not fit in {key_bits} bits")]
    KeyOutOfRange { key: u32, key_bits: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl SortError {
    /// True for failures to obtain address space or memory, as opposed to
    /// configuration or capacity mistakes.
    pub fn is_resource_failure(&self) -> bool {
        matches!(
            self,
            SortError::Region(
                RegionError::ReserveFailed { .. }
                    | RegionError::CommitFailed(_)
                    | RegionError::AddressSpaceTooSmall { .. }
                    | RegionError::LargePagesUnavailable(_)
            )
        )
    }
}
