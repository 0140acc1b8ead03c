use serde::Serialize;

use super::{distance_transform, GridDomain};
use crate::error::{LabError, Result};

/// Sup-norm distance between the distance-to-complement fields of two masks.
pub fn hc_distance(a: &GridDomain, b: &GridDomain) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    let (da, db) = (distance_transform(a), distance_transform(b));
    Ok(sup_diff(&da, &db))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Measure of the symmetric difference of the two cell sets.
pub fn ekeland_distance(a: &GridDomain, b: &GridDomain) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    let differing = a
        .cell_mask()
        .iter()
        .zip(b.cell_mask())
        .filter(|(x, y)| x != y)
        .count();
    let h = a.grid().h;
    Ok(h * h * differing as f64)
}

/// Grid-resolution verdict for one Kuratowski condition on complements.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    /// Excess per sequence member (see [`kuratowski_check`]).
    pub excess: Vec<f64>,
    /// Estimated limit of the excess sequence.
    pub limit_estimate: f64,
    /// Excess never grows by more than `tol` from one member to the next.
    pub nonincreasing: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KuratowskiReport {
    pub tol: f64,
    pub k1: ConditionVerdict,
    pub k2: ConditionVerdict,
}

/// Checks Kuratowski convergence of the complements `Ω_k^c → Ω^c` at grid
/// resolution.
///
/// For (K1) the excess of member `k` is the largest distance from a node of the
/// limit complement to the complement of `Ω_k`; for (K2) it is the largest
/// distance from a node of `Ω_k^c` to the limit complement. Both are computed
/// from exact distance transforms. A condition passes when its excess sequence
/// is nonincreasing up to `tol` and its limit, estimated by Aitken's Δ² on the
/// last three members (or the last value when the tail is not geometrically
/// decaying), is at most `tol`.
pub fn kuratowski_check(seq: &[GridDomain], limit: &GridDomain, tol: f64) -> Result<KuratowskiReport> {
    if seq.is_empty() {
        return Err(LabError::EmptySequence("kuratowski_check needs at least one set".into()));
    }
    for d in seq {
        d.grid().ensure_same(limit.grid())?;
    }
    let dt_lim = distance_transform(limit);
    let mut e1 = Vec::with_capacity(seq.len());
    let mut e2 = Vec::with_capacity(seq.len());
    for d in seq {
        let dt = distance_transform(d);
        let k1 = (0..dt.len())
            .filter(|&k| !limit.contains(k))
            .map(|k| dt[k])
            .fold(0.0, f64::max);
        let k2 = (0..dt.len())
            .filter(|&k| !d.contains(k))
            .map(|k| dt_lim[k])
            .fold(0.0, f64::max);
        e1.push(k1);
        e2.push(k2);
    }
    Ok(KuratowskiReport {
        tol,
        k1: verdict(e1, tol),
        k2: verdict(e2, tol),
    })
}

fn verdict(excess: Vec<f64>, tol: f64) -> ConditionVerdict {
    let nonincreasing = excess.windows(2).all(|w| w[1] <= w[0] + tol);
    let limit_estimate = aitken_limit(&excess);
    ConditionVerdict {
        pass: nonincreasing && limit_estimate <= tol,
        excess,
        limit_estimate,
        nonincreasing,
    }
}

fn aitken_limit(e: &[f64]) -> f64 {
    let n = e.len();
    let last = e[n - 1];
    if n < 3 {
        return last;
    }
    let (a, b, c) = (e[n - 3], e[n - 2], last);
    let (d1, d2) = (b - a, c - b);
    let dd = d2 - d1;
    // only extrapolate a strictly decreasing, convex tail
    if d1 < 0.0 && d2 < 0.0 && dd > 0.0 && d2 / d1 < 0.95 {
        (c - d2 * d2 / dd).clamp(0.0, c)
    } else {
        last
    }
}
