use super::GridDomain;

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform of a sampled function by the
/// lower envelope of parabolas rooted at each sample. Unit sample spacing.
pub fn squared_edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            // z[0] is -inf, so this never underflows k
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact Euclidean distance from every node to the nearest node outside the
/// domain. Zero exactly on outside nodes.
pub fn distance_transform(d: &GridDomain) -> Vec<f64> {
    let g = d.grid();
    let (nx, ny) = (g.nx, g.ny);
    let mut sq: Vec<f64> = d.mask().iter().map(|&m| if m { FAR } else { 0.0 }).collect();

    let mut row_out = vec![0.0; nx];
    for j in 0..ny {
        let row = &sq[j * nx..(j + 1) * nx];
        squared_edt_1d(row, &mut row_out);
        sq[j * nx..(j + 1) * nx].copy_from_slice(&row_out);
    }
    let mut col = vec![0.0; ny];
    let mut col_out = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = sq[j * nx + i];
        }
        squared_edt_1d(&col, &mut col_out);
        for j in 0..ny {
            sq[j * nx + i] = col_out[j];
        }
    }
    let h = g.h;
    sq.into_iter()
        .map(|s| if s >= FAR { f64::INFINITY } else { h * s.sqrt() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, Shape};
    use crate::grid::GridSpec;
    use proptest::prelude::*;

    fn brute_force(d: &GridDomain) -> Vec<f64> {
        let g = d.grid();
        let outside: Vec<usize> = (0..g.n_nodes()).filter(|&k| !d.contains(k)).collect();
        (0..g.n_nodes())
            .map(|k| {
                let (x, y) = g.node_xy(k);
                outside
                    .iter()
                    .map(|&o| {
                        let (a, b) = g.node_xy(o);
                        ((x - a).powi(2) + (y - b).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn empty_domain_is_all_zero() {
        let g = GridSpec::unit(17).unwrap();
        assert!(distance_transform(&GridDomain::empty(g)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_center_value() {
        let g = GridSpec::unit(65).unwrap();
        let d = rasterize(&Shape::disk(0.5, 0.5, 0.3), &g).unwrap();
        let dt = distance_transform(&d);
        let c = dt[g.node(32, 32)];
        assert!((c - 0.3).abs() <= g.h, "{c}");
    }

    #[test]
    fn half_plane_value() {
        let g = GridSpec::unit(65).unwrap();
        let h = g.h;
        let d = rasterize(&Shape::rect(0.5 * h, 0.5, 0.5 * h, 1.0 - 0.5 * h), &g).unwrap();
        let dt = distance_transform(&d);
        // (0.25, 0.5) is node (16, 32); the nearest outside node is across x = 0.5
        // or on the left boundary, both 0.25 away.
        assert!((dt[g.node(16, 32)] - 0.25).abs() <= h);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_brute_force(bits in proptest::collection::vec(any::<bool>(), 81)) {
            let g = GridSpec::unit(11).unwrap();
            let mut mask = vec![false; g.n_nodes()];
            for j in 1..10 {
                for i in 1..10 {
                    mask[g.node(i, j)] = bits[(j - 1) * 9 + (i - 1)];
                }
            }
            let d = GridDomain::from_mask(g, mask).unwrap();
            let fast = distance_transform(&d);
            let slow = brute_force(&d);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_lipschitz_across_neighbors() {
        let g = GridSpec::unit(65).unwrap();
        let shape = Shape::Union {
            parts: vec![Shape::disk(0.3, 0.4, 0.2), Shape::rect(0.4, 0.9, 0.55, 0.7)],
        };
        let d = rasterize(&shape, &g).unwrap();
        let dt = distance_transform(&d);
        let lim = g.h * 2f64.sqrt() + 1e-15;
        for j in 0..g.ny - 1 {
            for i in 0..g.nx - 1 {
                let a = dt[g.node(i, j)];
                assert!((a - dt[g.node(i + 1, j)]).abs() <= lim);
                assert!((a - dt[g.node(i, j + 1)]).abs() <= lim);
                assert!((a - dt[g.node(i + 1, j + 1)]).abs() <= lim);
            }
        }
    }
}
