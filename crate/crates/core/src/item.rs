//! Sortable records: bare 32-bit keys and key/value pairs fused into one 64-bit word.

use std::fmt;
use std::mem::size_of;

use serde::{Deserialize, Serialize};

/// A fixed-size record carrying a 32-bit sort key.
///
/// # Safety
///
/// Implementors must be plain data: every bit pattern, including all zeroes,
/// is a valid value, and the size must divide a 64-byte cache line. Lane
/// storage is handed out from zero-filled anonymous mappings and copied as
/// raw bytes by the write-combining layer.
pub unsafe trait RadixItem: Copy + Send + Sync + 'static {
    fn key(&self) -> u32;

    /// Size of one record in bytes.
    const BYTES: usize = size_of::<Self>();
}

// SAFETY: u32 is plain data, 4 bytes.
unsafe impl RadixItem for u32 {
    #[inline(always)]
    fn key(&self) -> u32 {
        *self
    }
}

/// A 32-bit key with its 32-bit payload, adjacent in one 8-byte record.
#[repr(C, align(8))]
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct KeyValue {
    pub key: u32,
    pub value: u32,
}

impl KeyValue {
    #[inline]
    pub const fn new(key: u32, value: u32) -> Self {
        Self { key, value }
    }
}

impl fmt::Debug for KeyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:#010x}, {})", self.key, self.value)
    }
}

// SAFETY: two u32 fields with no padding, 8 bytes.
unsafe impl RadixItem for KeyValue {
    #[inline(always)]
    fn key(&self) -> u32 {
        self.key
    }
}

const _: () = assert!(size_of::<KeyValue>() == 8);
const _: () = assert!(64 % size_of::<KeyValue>() == 0 && 64 % size_of::<u32>() == 0);
