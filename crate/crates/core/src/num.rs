//! Small numeric helpers shared by the solvers.

/// `|t|^(p-2) t`, with exact fast paths for the integer exponents 2, 3, 4.
#[inline]
pub fn signed_pow(t: f64, p: f64) -> f64 {
    if p == 2.0 {
        t
    } else if p == 3.0 {
        t * t.abs()
    } else if p == 4.0 {
        t * t * t
    } else {
        t.abs().powf(p - 2.0) * t
    }
}

/// `|t|^p`
#[inline]
pub fn abs_pow(t: f64, p: f64) -> f64 {
    if p == 2.0 {
        t * t
    } else if p == 3.0 {
        t.abs() * t * t
    } else if p == 4.0 {
        let s = t * t;
        s * s
    } else {
        t.abs().powf(p)
    }
}

/// `|t|^(p-2)`
#[inline]
pub fn weight_pow(t: f64, p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else if p == 3.0 {
        t.abs()
    } else if p == 4.0 {
        t * t
    } else {
        t.abs().powf(p - 2.0)
    }
}

/// Conjugate exponent `q` with `1/p + 1/q = 1`.
#[inline]
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest root of a continuous `f` on `[lo, hi]` with `f(lo) <= 0 <= f(hi)`,
/// by bisection to full double precision.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_paths_agree_with_powf() {
        for &p in &[2.0f64, 3.0, 4.0] {
            for &t in &[-1.7f64, -0.3, 0.0, 0.4, 2.5] {
                let slow = t.abs().powf(p - 2.0) * t;
                assert!((signed_pow(t, p) - slow).abs() < 1e-13);
                assert!((abs_pow(t, p) - t.abs().powf(p)).abs() < 1e-13);
                assert!((weight_pow(t, p) - t.abs().powf(p - 2.0)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bisection_finds_cube_root() {
        let r = bisect(|z| z + z * z * z - 2.0, 0.0, 2.0);
        assert!((r - 1.0).abs() < 1e-14);
    }
}
