//! The integral equation `z + B F(y, z) = g` with a Gaussian kernel plus ridge
//! for `B` and `F(y, z) = |y|^{p-2} y + |z|^{p-2} z`.
//!
//! Inner products and norms are the grid quadratures `h² Σ` over domain nodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::GridDomain;
use crate::grid::GridSpec;
use crate::linalg::pcg;
use crate::num::{abs_pow, bisect, signed_pow};
use crate::par;
use crate::state::{lp_norm, StateField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    GaussianRidge,
    ScaledIdentity,
}

/// `B w = c h² Σ_j exp(-|x_i - x_j|² / (2 σ²)) w_j + δ w_i` over domain nodes.
/// For `scaled_identity` the kernel part is dropped and `B = δ I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub ridge: f64,
}

fn default_width() -> f64 {
    0.1
}

fn default_scale() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn gaussian(width: f64, scale: f64, ridge: f64) -> Self {
        KernelSpec {
            kind: KernelKind::GaussianRidge,
            width,
            scale,
            ridge,
        }
    }

    pub fn scaled_identity(ridge: f64) -> Self {
        KernelSpec {
            kind: KernelKind::ScaledIdentity,
            width: default_width(),
            scale: 0.0,
            ridge,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(LabError::InvalidParams(format!("kernel ridge must be positive, got {}", self.ridge)));
        }
        if self.kind == KernelKind::GaussianRidge {
            if !(self.width > 0.0 && self.width.is_finite()) {
                return Err(LabError::InvalidParams(format!("kernel width must be positive, got {}", self.width)));
            }
            if !(self.scale > 0.0 && self.scale.is_finite()) {
                return Err(LabError::InvalidParams(format!("kernel scale must be positive, got {}", self.scale)));
            }
        }
        Ok(())
    }

    /// Diagonal entry of `B`.
    pub fn diagonal(&self, grid: &GridSpec) -> f64 {
        match self.kind {
            KernelKind::GaussianRidge => self.scale * grid.h * grid.h + self.ridge,
            KernelKind::ScaledIdentity => self.ridge,
        }
    }
}

/// Applies `B` to `w` (values outside the domain are ignored; the result is
/// zero there). The Gaussian factorizes, so this is a row pass followed by a
/// column pass, each summed in a fixed order.
pub fn apply_b(k: &KernelSpec, w: &[f64], domain: &GridDomain) -> Vec<f64> {
    let g = domain.grid();
    let w = domain.restrict(w);
    let mut out = match k.kind {
        KernelKind::ScaledIdentity => vec![0.0; w.len()],
        KernelKind::GaussianRidge => gaussian_pass(g, &w, k.width, k.scale * g.h * g.h),
    };
    for (idx, o) in out.iter_mut().enumerate() {
        *o = if domain.contains(idx) { *o + k.ridge * w[idx] } else { 0.0 };
    }
    out
}

fn gaussian_pass(g: &GridSpec, w: &[f64], sigma: f64, c: f64) -> Vec<f64> {
    let (nx, ny) = (g.nx, g.ny);
    let table = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|d| {
                let t = d as f64 * g.h;
                (-t * t / (2.0 * sigma * sigma)).exp()
            })
            .collect()
    };
    let (kx, ky) = (table(nx), table(ny));
    let rows: Vec<Vec<f64>> = par::map_range(ny, |j| {
        let row = &w[j * nx..(j + 1) * nx];
        if row.iter().all(|&v| v == 0.0) {
            return vec![0.0; nx];
        }
        (0..nx)
            .map(|i| row.iter().enumerate().map(|(a, &v)| kx[a.abs_diff(i)] * v).sum())
            .collect()
    });
    let cols: Vec<Vec<f64>> = par::map_range(ny, |jo| {
        let mut acc = vec![0.0; nx];
        for (j, row) in rows.iter().enumerate() {
            let kv = ky[j.abs_diff(jo)];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += kv * v;
            }
        }
        acc
    });
    cols.into_iter().flatten().map(|v| c * v).collect()
}

/// Pointwise `F(y, z) = |y|^{p-2} y + |z|^{p-2} z`.
pub fn eval_f(y: &[f64], z: &[f64], p: f64) -> Vec<f64> {
    y.iter().zip(z).map(|(&a, &b)| signed_pow(a, p) + signed_pow(b, p)).collect()
}

/// `h² Σ_{domain} a b`.
pub fn inner(domain: &GridDomain, a: &[f64], b: &[f64]) -> f64 {
    let h = domain.grid().h;
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(domain.mask())
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| x * y)
        .sum();
    h * h * s
}

/// Bound on `‖z‖_{L^p}` for any solution: the largest root of
/// `t^p = ‖y‖_p^{p-1} t + ‖g‖_2² / (4 δ)`.
pub fn solution_bound(domain: &GridDomain, y: &[f64], g: &[f64], ridge: f64, p: f64) -> f64 {
    let k = lp_norm(domain, y, p).powf(p - 1.0);
    let gg = lp_norm(domain, g, 2.0).powi(2) / (4.0 * ridge);
    if k == 0.0 && gg == 0.0 {
        return 0.0;
    }
    let f = |t: f64| t.powf(p) - k * t - gg;
    let mut hi = 1.0 + k.powf(1.0 / (p - 1.0)) + gg.powf(1.0 / p);
    while f(hi) <= 0.0 {
        hi *= 2.0;
    }
    bisect(f, 0.0, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HammersteinOptions {
    /// Absolute max-norm residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Inner CG tolerance relative to the outer residual.
    pub inner_tol: f64,
    pub max_inner_iter: usize,
    /// Re-solve from `z₀ = g` and report the distance between the solutions.
    pub check_uniqueness: bool,
}

impl Default for HammersteinOptions {
    fn default() -> Self {
        HammersteinOptions {
            tol: 1e-9,
            max_iter: 100,
            inner_tol: 1e-2,
            max_inner_iter: 5000,
            check_uniqueness: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HammersteinSolution {
    #[serde(skip)]
    pub z: Vec<f64>,
    pub residual_norm: f64,
    pub newton_iters: usize,
    pub fixed_point_steps: usize,
    /// `‖z - z'‖_{L^p}` between the solves started at `0` and at `g`.
    pub uniqueness_gap: Option<f64>,
    pub lp_norm: f64,
    pub lambda: f64,
    pub bound_ok: bool,
    /// Relative defect of `⟨F, z⟩ + ⟨F, B F⟩ = ⟨F, g⟩`.
    pub energy_identity_error: f64,
}

struct RawSolve {
    z: Vec<f64>,
    residual: f64,
    newton: usize,
    fixed: usize,
}

fn residual(domain: &GridDomain, k: &KernelSpec, y: &[f64], z: &[f64], g: &[f64], p: f64) -> (Vec<f64>, f64) {
    let bf = apply_b(k, &eval_f(y, z, p), domain);
    let mut r = vec![0.0; z.len()];
    let mut m = 0.0f64;
    for i in 0..z.len() {
        if domain.contains(i) {
            r[i] = z[i] + bf[i] - g[i];
            m = m.max(r[i].abs());
        }
    }
    (r, m)
}

fn newton_solve(domain: &GridDomain, k: &KernelSpec, y: &[f64], g: &[f64], p: f64, z0: Vec<f64>, opts: &HammersteinOptions) -> Result<RawSolve> {
    let nodes = domain.nodes();
    let n_nodes = z0.len();
    let bdiag = k.diagonal(domain.grid());
    let mut z = domain.restrict(&z0);
    let (mut r, mut res) = residual(domain, k, y, &z, g, p);
    let (mut newton, mut fixed) = (0, 0);
    let mut it = 0;
    while res > opts.tol {
        if it >= opts.max_iter {
            return Err(LabError::NoConvergence {
                solver: "Hammerstein Newton",
                iterations: it,
                residual: res,
            });
        }
        it += 1;
        // J s = R with J = I + B D solved through the SPD system
        // (I + D^{1/2} B D^{1/2}) w = D^{1/2} R, s = R - B D^{1/2} w
        let sd: Vec<f64> = z
            .iter()
            .map(|&v| {
                let d = if p == 2.0 { 1.0 } else { (p - 1.0) * (v * v + 1e-16).powf(0.5 * (p - 2.0)) };
                d.sqrt()
            })
            .collect();
        let rhs: Vec<f64> = nodes.iter().map(|&n| sd[n] * r[n]).collect();
        let diag: Vec<f64> = nodes.iter().map(|&n| 1.0 + sd[n] * sd[n] * bdiag).collect();
        let apply = |w: &[f64], out: &mut [f64]| {
            let mut full = vec![0.0; n_nodes];
            for (u, &n) in nodes.iter().enumerate() {
                full[n] = sd[n] * w[u];
            }
            let bw = apply_b(k, &full, domain);
            for (u, &n) in nodes.iter().enumerate() {
                out[u] = w[u] + sd[n] * bw[n];
            }
        };
        let mut w = vec![0.0; nodes.len()];
        let st = pcg(apply, &diag, &rhs, &mut w, opts.inner_tol * res, opts.max_inner_iter);
        let mut accepted = false;
        if st.converged {
            let mut full = vec![0.0; n_nodes];
            for (u, &n) in nodes.iter().enumerate() {
                full[n] = sd[n] * w[u];
            }
            let bw = apply_b(k, &full, domain);
            let s: Vec<f64> = r.iter().zip(&bw).map(|(a, b)| a - b).collect();
            let mut t = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> = z.iter().zip(&s).map(|(a, b)| a - t * b).collect();
                let (rt, rest) = residual(domain, k, y, &trial, g, p);
                if rest < res {
                    z = trial;
                    r = rt;
                    res = rest;
                    accepted = true;
                    newton += 1;
                    break;
                }
                t *= 0.5;
            }
        }
        if !accepted {
            let mut omega = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> = z.iter().zip(&r).map(|(a, b)| a - omega * b).collect();
                let (rt, rest) = residual(domain, k, y, &trial, g, p);
                if rest < res {
                    z = trial;
                    r = rt;
                    res = rest;
                    accepted = true;
                    fixed += 1;
                    break;
                }
                omega *= 0.5;
            }
        }
        if !accepted {
            return Err(LabError::NoConvergence {
                solver: "Hammerstein fixed point",
                iterations: it,
                residual: res,
            });
        }
    }
    Ok(RawSolve { z, residual: res, newton, fixed })
}

/// Solves `z + B F(y, z) = g` on the state's domain, from `z₀ = 0` and again
/// from `z₀ = g` to measure uniqueness.
pub fn solve_hammerstein(y: &StateField, g: &[f64], k: &KernelSpec, p: f64, opts: &HammersteinOptions) -> Result<HammersteinSolution> {
    solve_on(&y.domain, &y.values, g, k, p, opts)
}

/// Same as [`solve_hammerstein`] on raw nodal values.
pub fn solve_on(domain: &GridDomain, y: &[f64], g: &[f64], k: &KernelSpec, p: f64, opts: &HammersteinOptions) -> Result<HammersteinSolution> {
    k.validate()?;
    let grid = domain.grid();
    grid.check_len(y.len(), "y")?;
    grid.check_len(g.len(), "g")?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(LabError::InvalidParams("g has non-finite values".into()));
    }
    if !(p >= 2.0) {
        return Err(LabError::InvalidParams(format!("p must be at least 2, got {p}")));
    }
    let n = grid.n_nodes();
    let first = newton_solve(domain, k, y, g, p, vec![0.0; n], opts)?;
    let uniqueness_gap = if opts.check_uniqueness {
        let second = newton_solve(domain, k, y, g, p, g.to_vec(), opts)?;
        let diff: Vec<f64> = first.z.iter().zip(&second.z).map(|(a, b)| a - b).collect();
        Some(lp_norm(domain, &diff, p))
    } else {
        None
    };
    let z = first.z;
    let lp = lp_norm(domain, &z, p);
    let lambda = solution_bound(domain, y, g, k.ridge, p);
    let f = eval_f(y, &z, p);
    let bf = apply_b(k, &f, domain);
    let (fz, fbf, fg) = (inner(domain, &f, &z), inner(domain, &f, &bf), inner(domain, &f, g));
    let scale = fz.abs().max(fbf.abs()).max(fg.abs()).max(f64::MIN_POSITIVE);
    Ok(HammersteinSolution {
        residual_norm: first.residual,
        newton_iters: first.newton,
        fixed_point_steps: first.fixed,
        uniqueness_gap,
        lp_norm: lp,
        lambda,
        bound_ok: lp <= lambda * (1.0 + 1e-9) + opts.tol,
        energy_identity_error: (fz + fbf - fg).abs() / scale,
        z,
    })
}

/// Worst margin of `⟨F(y,z₁) - F(y,z₂), z₁ - z₂⟩ >= 2^{2-p} ‖z₁ - z₂‖_p^p`
/// over seeded random pairs. Since `F` has no compact part here, the
/// semi-bounded-variation condition holds with a zero function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub constant: f64,
    pub worst_margin: f64,
    pub ok: bool,
    pub semibounded_variation: &'static str,
}

pub const MONOTONE_TOL: f64 = 1e-10;

pub fn monotonicity_margin(domain: &GridDomain, y: &[f64], z1: &[f64], z2: &[f64], p: f64) -> f64 {
    let (f1, f2) = (eval_f(y, z1, p), eval_f(y, z2, p));
    let df: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
    let dz: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| a - b).collect();
    inner(domain, &df, &dz) - 2f64.powf(2.0 - p) * lp_norm(domain, &dz, p).powf(p)
}

pub fn monotonicity_probe(domain: &GridDomain, y: &[f64], pairs: usize, p: f64, seed: u64) -> Result<MonotonicityReport> {
    if pairs == 0 {
        return Err(LabError::InvalidParams("monotonicity probe needs at least one pair".into()));
    }
    let n = domain.grid().n_nodes();
    let margins = par::map_range(pairs, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let scale = rng.gen_range(0.01..4.0);
        let z1: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let z2: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        monotonicity_margin(domain, y, &z1, &z2, p)
    });
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MonotonicityReport {
        pairs,
        constant: 2f64.powf(2.0 - p),
        worst_margin: worst,
        ok: worst >= -MONOTONE_TOL,
        semibounded_variation: "satisfied_by_monotonicity",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyVerdict {
    Pass,
    Fail,
    /// The pairing never approached its limit value, so nothing was tested.
    Vacuous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaReport {
    pub pairings: Vec<f64>,
    pub limit_pairing: f64,
    pub liminf_estimate: f64,
    pub a_property: PropertyVerdict,
    pub m_property: PropertyVerdict,
    pub final_distance: f64,
}

/// Checks the liminf (`𝔄`) and convergence-of-pairing (`𝔐`) properties of `F`
/// on finite sequences `(y_k, z_k)` against a designated limit `(y, z)`.
pub fn ma_property_probe(domain: &GridDomain, y_seq: &[Vec<f64>], z_seq: &[Vec<f64>], y: &[f64], z: &[f64], p: f64, tol: f64) -> Result<MaReport> {
    if y_seq.len() != z_seq.len() {
        return Err(LabError::InvalidParams(format!("sequence lengths differ: {} vs {}", y_seq.len(), z_seq.len())));
    }
    if y_seq.len() < 4 {
        return Err(LabError::EmptySequence(format!("need at least 4 terms, got {}", y_seq.len())));
    }
    let grid = domain.grid();
    for v in y_seq.iter().chain(z_seq).chain([&y.to_vec(), &z.to_vec()]) {
        grid.check_len(v.len(), "sequence term")?;
    }
    let pairing = |a: &[f64], b: &[f64]| inner(domain, &eval_f(a, b, p), b);
    let pairings: Vec<f64> = y_seq.iter().zip(z_seq).map(|(a, b)| pairing(a, b)).collect();
    let limit = pairing(y, z);
    let tail = &pairings[pairings.len() - pairings.len().div_ceil(4)..];
    let liminf = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let a_property = if liminf >= limit - tol { PropertyVerdict::Pass } else { PropertyVerdict::Fail };
    let last = z_seq.last().expect("length checked");
    let diff: Vec<f64> = last.iter().zip(z).map(|(a, b)| a - b).collect();
    let final_distance = lp_norm(domain, &diff, p);
    let m_property = if (pairings[pairings.len() - 1] - limit).abs() > tol {
        PropertyVerdict::Vacuous
    } else if final_distance <= tol {
        PropertyVerdict::Pass
    } else {
        PropertyVerdict::Fail
    };
    Ok(MaReport {
        pairings,
        limit_pairing: limit,
        liminf_estimate: liminf,
        a_property,
        m_property,
        final_distance,
    })
}

/// `|z|^p` summed with grid weights; handy for reports.
pub fn lp_power(domain: &GridDomain, z: &[f64], p: f64) -> f64 {
    let h = domain.grid().h;
    h * h * z.iter().zip(domain.mask()).filter(|(_, &m)| m).map(|(&v, _)| abs_pow(v, p)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::max_abs;

    fn single_node() -> GridDomain {
        GridDomain::full_interior(GridSpec::unit(3).unwrap())
    }

    fn random_field(d: &GridDomain, rng: &mut ChaCha8Rng, s: f64) -> Vec<f64> {
        let v: Vec<f64> = (0..d.grid().n_nodes()).map(|_| s * rng.gen_range(-1.0..1.0)).collect();
        d.restrict(&v)
    }

    #[test]
    fn b_matches_direct_double_sum() {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let k = KernelSpec::gaussian(0.15, 2.0, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_field(&d, &mut rng, 1.0);
        let bw = apply_b(&k, &w, &d);
        for i in 0..g.n_nodes() {
            if !d.contains(i) {
                assert_eq!(bw[i], 0.0);
                continue;
            }
            let (xi, yi) = g.node_xy(i);
            let mut s = 0.0;
            for j in 0..g.n_nodes() {
                if d.contains(j) {
                    let (xj, yj) = g.node_xy(j);
                    let r2 = (xi - xj).powi(2) + (yi - yj).powi(2);
                    s += (-r2 / (2.0 * 0.15 * 0.15)).exp() * w[j];
                }
            }
            let expect = 2.0 * g.h * g.h * s + 0.3 * w[i];
            assert!((bw[i] - expect).abs() < 1e-13, "{} vs {expect}", bw[i]);
        }
    }

    #[test]
    fn b_trivial_cases() {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let k = KernelSpec::gaussian(0.2, 1.0, 0.1);
        assert!(apply_b(&k, &vec![0.0; 81], &d).iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_field(&d, &mut rng, 3.0);
        let bw = apply_b(&KernelSpec::scaled_identity(2.0), &w, &d);
        assert!(bw.iter().zip(&w).all(|(a, b)| *a == 2.0 * b));
    }

    #[test]
    fn b_is_symmetric_and_positive() {
        let g = GridSpec::unit(17).unwrap();
        let d = GridDomain::full_interior(g);
        let k = KernelSpec::gaussian(0.1, 1.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (v, w) = (random_field(&d, &mut rng, 1.0), random_field(&d, &mut rng, 1.0));
            let (bv, bw) = (apply_b(&k, &v, &d), apply_b(&k, &w, &d));
            assert!((inner(&d, &bv, &w) - inner(&d, &bw, &v)).abs() < 1e-12);
            let q = inner(&d, &bw, &w);
            assert!(q > 0.0);
            assert!(q >= k.ridge * inner(&d, &w, &w) - 1e-15);
        }
    }

    #[test]
    fn f_values() {
        assert_eq!(eval_f(&[0.0], &[0.0], 3.0), vec![0.0]);
        assert_eq!(eval_f(&[0.3, -1.2], &[0.7, 2.5], 2.0), vec![0.3 + 0.7, -1.2 + 2.5]);
        assert_eq!(eval_f(&[2.0], &[-1.0], 4.0), vec![7.0]);
    }

    fn with_center(v: f64) -> Vec<f64> {
        let mut x = vec![0.0; 9];
        x[4] = v;
        x
    }

    #[test]
    fn single_node_p2_solution() {
        let d = single_node();
        let s = solve_on(&d, &vec![0.0; 9], &with_center(3.0), &KernelSpec::scaled_identity(2.0), 2.0, &Default::default()).unwrap();
        let root = bisect(|z| z + 2.0 * z - 3.0, -10.0, 10.0);
        assert!((s.z[4] - root).abs() < 1e-9 && (root - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_node_p4_solution() {
        let d = single_node();
        let s = solve_on(&d, &vec![0.0; 9], &with_center(2.0), &KernelSpec::scaled_identity(1.0), 4.0, &Default::default()).unwrap();
        let root = bisect(|z| z + z.powi(3) - 2.0, -10.0, 10.0);
        assert!((s.z[4] - root).abs() < 1e-9 && (root - 1.0).abs() < 1e-12);
        assert!(s.bound_ok);
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let s = solve_on(&d, &vec![0.0; 81], &vec![0.0; 81], &KernelSpec::gaussian(0.1, 1.0, 0.1), 3.0, &Default::default()).unwrap();
        assert!(s.z.iter().all(|&v| v == 0.0));
        assert_eq!(s.lambda, 0.0);
    }

    #[test]
    fn random_solves_satisfy_invariants() {
        let g = GridSpec::unit(17).unwrap();
        let d = GridDomain::full_interior(g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in [2.0, 3.0, 4.0] {
            for _ in 0..3 {
                let y = random_field(&d, &mut rng, 1.0);
                let gg = random_field(&d, &mut rng, 5.0);
                let k = KernelSpec::gaussian(rng.gen_range(0.05..0.3), rng.gen_range(0.5..5.0), rng.gen_range(0.01..1.0));
                let opts = HammersteinOptions::default();
                let s = solve_on(&d, &y, &gg, &k, p, &opts).unwrap();
                assert!(s.residual_norm <= opts.tol);
                assert!(s.uniqueness_gap.unwrap() <= 10.0 * opts.tol, "{:?}", s.uniqueness_gap);
                assert!(s.bound_ok, "{} > {}", s.lp_norm, s.lambda);
                assert!(s.energy_identity_error < 1e-8, "{}", s.energy_identity_error);
                let (r, _) = residual(&d, &k, &y, &s.z, &gg, p);
                assert!(max_abs(&r) <= opts.tol);
            }
        }
    }

    #[test]
    fn monotonicity_equality_cases() {
        let d = single_node();
        let z1 = with_center(1.0);
        let z2 = with_center(-1.0);
        let m = monotonicity_margin(&d, &vec![0.0; 9], &z1, &z2, 4.0);
        assert!(m.abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = GridSpec::unit(9).unwrap();
        let dd = GridDomain::full_interior(g);
        let (a, b, y) = (random_field(&dd, &mut rng, 1.0), random_field(&dd, &mut rng, 1.0), random_field(&dd, &mut rng, 1.0));
        assert!(monotonicity_margin(&dd, &y, &a, &b, 2.0).abs() < 1e-15);
    }

    #[test]
    fn monotonicity_probe_p3() {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let y = g.sample(|x, y| x - y);
        let rep = monotonicity_probe(&d, &y, 1000, 3.0, 7).unwrap();
        assert!(rep.ok && rep.worst_margin >= -1e-10);
        assert!(monotonicity_probe(&d, &y, 0, 3.0, 7).is_err());
    }

    #[test]
    fn ma_probe_cases() {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let p = 3.0;
        let y = d.restrict(&g.sample(|x, y| x * y));
        let z = d.restrict(&g.sample(|x, y| (x + y).sin()));

        let rep = ma_property_probe(&d, &vec![y.clone(); 6], &vec![z.clone(); 6], &y, &z, p, 1e-12).unwrap();
        assert_eq!((rep.a_property, rep.m_property), (PropertyVerdict::Pass, PropertyVerdict::Pass));

        let osc = d.restrict(&g.sample(|x, y| (16.0 * x).sin().signum() * (16.0 * y).sin().signum()));
        let unit: Vec<f64> = osc.iter().map(|v| v / lp_norm(&d, &osc, p)).collect();
        let zs: Vec<Vec<f64>> = (0..8).map(|_| z.iter().zip(&unit).map(|(a, b)| a + b).collect()).collect();
        let rep = ma_property_probe(&d, &vec![y.clone(); 8], &zs, &y, &z, p, 1e-6).unwrap();
        assert_eq!(rep.m_property, PropertyVerdict::Vacuous);

        let zs: Vec<Vec<f64>> = (0..30).map(|k| z.iter().zip(&unit).map(|(a, b)| a + 0.5f64.powi(k) * b).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..30).map(|k| y.iter().map(|v| v * (1.0 + 0.5f64.powi(k))).collect()).collect();
        let rep = ma_property_probe(&d, &ys, &zs, &y, &z, p, 1e-6).unwrap();
        assert_eq!((rep.a_property, rep.m_property), (PropertyVerdict::Pass, PropertyVerdict::Pass));

        assert!(matches!(ma_property_probe(&d, &vec![y.clone(); 3], &vec![z.clone(); 3], &y, &z, p, 1e-6), Err(LabError::EmptySequence(_))));
    }
}
