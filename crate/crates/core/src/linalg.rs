//! Compressed sparse rows and the two Krylov solvers the lab needs.

use crate::num::{dot, max_abs};

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

/// Accumulates `(row, col, value)` triplets. Duplicates are summed in
/// insertion order, so assembly is deterministic.
#[derive(Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder { n, entries: Vec::new() }
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.entries.push((r, c, v));
    }

    pub fn build(mut self) -> Csr {
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.n + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut data: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.n {
            indptr[r + 1] += indptr[r];
        }
        Csr {
            n: self.n,
            indptr,
            indices,
            data,
        }
    }
}

impl Csr {
    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            *yr = s;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.indptr[r]..self.indptr[r + 1])
                    .find(|&k| self.indices[k] == r)
                    .map_or(0.0, |k| self.data[k])
            })
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        (self.indptr[r]..self.indptr[r + 1])
            .find(|&k| self.indices[k] == c)
            .map_or(0.0, |k| self.data[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    /// Max-norm of the recursively updated residual at exit.
    pub residual: f64,
    pub converged: bool,
}

fn jacobi(diag: &[f64]) -> Vec<f64> {
    let scale = max_abs(diag).max(f64::MIN_POSITIVE);
    diag.iter()
        .map(|&d| if d.abs() > 1e-14 * scale { 1.0 / d } else { 1.0 / scale })
        .collect()
}

/// Jacobi-preconditioned conjugate gradients on an abstract SPD operator.
pub fn pcg<A: Fn(&[f64], &mut [f64])>(
    apply: A,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> KrylovStats {
    let n = b.len();
    let minv = jacobi(diag);
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = max_abs(&r);
    let mut it = 0;
    while res > tol && it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let a = rz / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        res = max_abs(&r);
        it += 1;
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    KrylovStats {
        iterations: it,
        residual: res,
        converged: res <= tol,
    }
}

/// Jacobi-preconditioned BiCGSTAB for nonsymmetric systems.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> KrylovStats {
    let n = b.len();
    let minv = jacobi(&a.diag());
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = max_abs(&r);
    let mut it = 0;
    while res > tol && it < max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * minv[i];
        }
        a.mul(&y, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 {
            break;
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        it += 1;
        if max_abs(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            r.copy_from_slice(&s);
            res = max_abs(&r);
            break;
        }
        for i in 0..n {
            zz[i] = s[i] * minv[i];
        }
        a.mul(&zz, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        res = max_abs(&r);
    }
    KrylovStats {
        iterations: it,
        residual: res,
        converged: res <= tol,
    }
}
