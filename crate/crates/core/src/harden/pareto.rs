//! Non-dominated trials and the selection rule for the hardened setting.
//!
//! Both objectives are minimized: leakage (MLS) and sensitivity. Ranking by
//! sensitivity is the same as ranking by the signed utility loss against a
//! fixed baseline.

/// Absolute MLS tolerance within which trials count as equally private.
pub const MLS_SLACK: f64 = 0.001;

/// `(mls, sensitivity)` of one trial.
pub type Point = (f64, f64);

pub fn dominates(a: Point, b: Point) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Indices of non-dominated points in ascending order. Exact duplicates keep
/// only their first occurrence.
pub fn pareto_indices(points: &[Point]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let p = points[i];
            !points
                .iter()
                .enumerate()
                .any(|(j, &q)| dominates(q, p) || (j < i && q == p))
        })
        .collect()
}

/// Lowest MLS; trials within [`MLS_SLACK`] of it are decided by lower
/// sensitivity, then lower MLS, then lower index.
pub fn select_best_index(points: &[Point]) -> Option<usize> {
    let min = points.iter().map(|p| p.0).min_by(f64::total_cmp)?;
    let limit = min + MLS_SLACK + 1e-12;
    (0..points.len()).filter(|&i| points[i].0 <= limit).min_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa.1.total_cmp(&pb.1).then(pa.0.total_cmp(&pb.0)).then(a.cmp(&b))
    })
}
