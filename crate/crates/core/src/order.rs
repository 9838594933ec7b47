//! Deterministic ordering helpers with a resolution-limited notion of
//! equality.
//!
//! Analog comparisons (discharge races, accumulator minima) cannot resolve
//! values closer than the comparator resolution. Values whose gap is within
//! `tolerance` are treated as tied, and every tie is broken by the lowest
//! index. Grouping is done on the sorted sequence so the result is a total,
//! deterministic order even when float noise separates mathematically equal
//! values by a few ULPs.

use crate::scalar::Scalar;

/// Groups of `(index, value)` with tied values, in ascending value order.
/// Members of a group are sorted by index.
pub fn tie_groups_ascending<T: Scalar>(items: &[(usize, T)], tolerance: T) -> Vec<Vec<(usize, T)>> {
    let mut sorted: Vec<(usize, T)> = items.to_vec();
    sorted.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut groups: Vec<Vec<(usize, T)>> = Vec::new();
    let mut anchor: Option<T> = None;
    for item in sorted {
        match (groups.last_mut(), anchor) {
            (Some(group), Some(a)) if item.1 - a <= tolerance => group.push(item),
            _ => {
                groups.push(vec![item]);
                anchor = Some(item.1);
            }
        }
    }
    for group in &mut groups {
        group.sort_by_key(|(i, _)| *i);
    }
    groups
}

/// Index of the minimum value; ties (within `tolerance`) go to the lowest
/// index. Returns the winner and whether a tie was resolved.
pub fn argmin_lowest_index<T: Scalar>(items: &[(usize, T)], tolerance: T) -> Option<(usize, bool)> {
    let groups = tie_groups_ascending(items, tolerance);
    groups.first().map(|g| (g[0].0, g.len() > 1))
}

/// The `k` entries with the largest values, ties broken by the lowest index.
/// Exact comparison; used by the software reference paths.
pub fn top_k_exact<T: Scalar>(items: &[(usize, T)], k: usize) -> Vec<usize> {
    let mut sorted: Vec<(usize, T)> = items.to_vec();
    sorted.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut out: Vec<usize> = sorted.iter().take(k).map(|(i, _)| *i).collect();
    out.sort_unstable();
    out
}

/// Lower median of a non-empty slice.
pub fn lower_median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Some(v[(v.len() - 1) / 2])
}
