//! Output checks: order, permutation, and stability.

use serde::{Deserialize, Serialize};

use crate::item::KeyValue;

/// Outcome of checking a sorted output against its input. Failure variants
/// carry the first offending output index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    CountMismatch { expected: usize, actual: usize },
    /// `output[index - 1].key > output[index].key`.
    OutOfOrder { index: usize },
    /// Output is ordered but is not a permutation of the input.
    MultisetMismatch { index: usize },
    /// Equal keys whose input positions (the values) are out of order.
    StabilityViolation { index: usize },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        *self == Verdict::Pass
    }

    /// Index of the first violation, if any.
    pub fn index(&self) -> Option<usize> {
        match *self {
            Verdict::Pass | Verdict::CountMismatch { .. } => None,
            Verdict::OutOfOrder { index }
            | Verdict::MultisetMismatch { index }
            | Verdict::StabilityViolation { index } => Some(index),
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::CountMismatch { expected, actual } => {
                write!(f, "count mismatch: expected {expected} items, got {actual}")
            }
            Verdict::OutOfOrder { index } => write!(f, "keys out of order at index {index}"),
            Verdict::MultisetMismatch { index } => {
                write!(f, "output is not a permutation of the input (first difference at {index})")
            }
            Verdict::StabilityViolation { index } => {
                write!(f, "equal keys reordered at index {index}")
            }
        }
    }
}

fn first_unordered<T>(output: &[T], key: impl Fn(&T) -> u32) -> Option<usize> {
    output
        .windows(2)
        .position(|w| key(&w[0]) > key(&w[1]))
        .map(|i| i + 1)
}

fn first_difference<T: PartialEq>(a: &[T], b: &[T]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| x != y)
}

pub fn verify_keys(output: &[u32], input: &[u32]) -> Verdict {
    if output.len() != input.len() {
        return Verdict::CountMismatch {
            expected: input.len(),
            actual: output.len(),
        };
    }
    if let Some(index) = first_unordered(output, |k| *k) {
        return Verdict::OutOfOrder { index };
    }
    let mut expect = input.to_vec();
    expect.sort_unstable();
    match first_difference(output, &expect) {
        Some(index) => Verdict::MultisetMismatch { index },
        None => Verdict::Pass,
    }
}

/// Checks records. When every input value equals its input position, the
/// values double as a stability witness and equal-key runs must keep them
/// increasing.
pub fn verify_records(output: &[KeyValue], input: &[KeyValue]) -> Verdict {
    if output.len() != input.len() {
        return Verdict::CountMismatch {
            expected: input.len(),
            actual: output.len(),
        };
    }
    if let Some(index) = first_unordered(output, |r| r.key) {
        return Verdict::OutOfOrder { index };
    }
    let mut got = output.to_vec();
    got.sort_unstable();
    let mut expect = input.to_vec();
    expect.sort_unstable();
    if let Some(i) = first_difference(&got, &expect) {
        // Report the position in the output, not in the re-sorted copy.
        let index = output.iter().position(|r| *r == got[i]).unwrap_or(i);
        return Verdict::MultisetMismatch { index };
    }
    let indexed = input.iter().enumerate().all(|(i, r)| r.value as usize == i);
    if indexed {
        let unstable = output
            .windows(2)
            .position(|w| w[0].key == w[1].key && w[0].value > w[1].value);
        if let Some(i) = unstable {
            return Verdict::StabilityViolation { index: i + 1 };
        }
    }
    Verdict::Pass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keygen::{attach_indices, generate_keys, Distribution};

    fn sorted_records(n: usize) -> (Vec<KeyValue>, Vec<KeyValue>) {
        let input = attach_indices(&generate_keys(n, Distribution::Duplicates(50), 1));
        let mut out = input.clone();
        out.sort_by_key(|r| r.key);
        (input, out)
    }

    #[test]
    fn sorted_output_passes() {
        let (input, out) = sorted_records(10_000);
        assert_eq!(verify_records(&out, &input), Verdict::Pass);
        let keys = generate_keys(10_000, Distribution::Uniform, 2);
        let mut sorted = keys.clone();
        sorted.sort();
        assert!(verify_keys(&sorted, &keys).passed());
    }

    #[test]
    fn swapped_equal_keys_break_stability() {
        let (input, mut out) = sorted_records(10_000);
        let i = out.windows(2).position(|w| w[0].key == w[1].key).unwrap();
        out.swap(i, i + 1);
        assert_eq!(
            verify_records(&out, &input),
            Verdict::StabilityViolation { index: i + 1 }
        );
    }

    #[test]
    fn truncated_output_is_a_count_mismatch() {
        let (input, out) = sorted_records(100);
        assert_eq!(
            verify_records(&out[..99], &input),
            Verdict::CountMismatch {
                expected: 100,
                actual: 99
            }
        );
        assert!(matches!(
            verify_keys(&[1, 2], &[1, 2, 3]),
            Verdict::CountMismatch { .. }
        ));
    }

    #[test]
    fn disorder_and_foreign_items_are_located() {
        assert_eq!(verify_keys(&[1, 3, 2], &[1, 2, 3]), Verdict::OutOfOrder { index: 2 });
        assert_eq!(
            verify_keys(&[1, 2, 4], &[1, 2, 3]),
            Verdict::MultisetMismatch { index: 2 }
        );
        let input = attach_indices(&[5, 5, 6]);
        let mut out = input.clone();
        out[2].value = 9;
        assert_eq!(verify_records(&out, &input), Verdict::MultisetMismatch { index: 2 });
    }

    #[test]
    fn verdict_serializes_with_status_tag() {
        let v = Verdict::StabilityViolation { index: 3 };
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"{"status":"stability-violation","index":3}"#);
        assert_eq!(serde_json::from_str::<Verdict>(&json).unwrap(), v);
    }
}
