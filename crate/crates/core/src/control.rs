//! Admissible matrix controls: bounds, the diagonal solenoidal
//! parametrization, class verification, and the discrete row divergence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::GridSpec;
use crate::num::{abs_pow, conjugate, signed_pow};
use crate::par;

/// A per-cell bound: one constant, or one value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellBound {
    Const(f64),
    Field(Vec<f64>),
}

impl CellBound {
    #[inline]
    pub fn at(&self, cell: usize) -> f64 {
        match self {
            CellBound::Const(v) => *v,
            CellBound::Field(f) => f[cell],
        }
    }
}

/// Exponent and class bounds. `q` is always derived from `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub xi1: CellBound,
    pub xi2: CellBound,
}

impl ClassParams {
    pub fn new(p: f64, alpha: f64, beta: f64) -> Result<Self> {
        let params = ClassParams {
            p,
            alpha,
            beta,
            xi1: CellBound::Const(0.0),
            xi2: CellBound::Const(beta),
        };
        params.validate(None)?;
        Ok(params)
    }

    pub fn with_xi(mut self, xi1: CellBound, xi2: CellBound) -> Self {
        self.xi1 = xi1;
        self.xi2 = xi2;
        self
    }

    #[inline]
    pub fn q(&self) -> f64 {
        conjugate(self.p)
    }

    /// `m = min(alpha, 1)`, the coercivity constant of the full operator.
    #[inline]
    pub fn coercivity(&self) -> f64 {
        self.alpha.min(1.0)
    }

    pub fn validate(&self, grid: Option<&GridSpec>) -> Result<()> {
        let bad = |m: String| Err(LabError::InvalidParams(m));
        if !(2.0..=4.0).contains(&self.p) {
            return bad(format!("p = {} outside [2, 4]", self.p));
        }
        if !(self.alpha > 0.0 && self.alpha <= self.beta && self.beta.is_finite()) {
            return bad(format!("need 0 < alpha <= beta, got {} and {}", self.alpha, self.beta));
        }
        if let Some(g) = grid {
            for (name, b) in [("xi1", &self.xi1), ("xi2", &self.xi2)] {
                if let CellBound::Field(f) = b {
                    if f.len() != g.n_cells() {
                        return bad(format!("{name} has {} values, grid has {} cells", f.len(), g.n_cells()));
                    }
                }
            }
            for c in 0..g.n_cells() {
                let (a, b) = (self.xi1.at(c), self.xi2.at(c));
                if !(0.0 <= a && a <= b) {
                    return bad(format!("need 0 <= xi1 <= xi2, cell {c} has {a} and {b}"));
                }
            }
        } else if let (CellBound::Const(a), CellBound::Const(b)) = (&self.xi1, &self.xi2) {
            if !(0.0 <= *a && a <= b) {
                return bad(format!("need 0 <= xi1 <= xi2, got {a} and {b}"));
            }
        }
        Ok(())
    }

    /// Feasible interval of a diagonal entry in `cell`.
    #[inline]
    pub fn diag_interval(&self, cell: usize) -> (f64, f64) {
        (self.alpha.max(self.xi1.at(cell)), self.beta.min(self.xi2.at(cell)))
    }

    /// Feasible interval of an off-diagonal entry in `cell`.
    #[inline]
    pub fn offdiag_interval(&self, cell: usize) -> (f64, f64) {
        ((-self.beta).max(self.xi1.at(cell)), self.beta.min(self.xi2.at(cell)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Diagonal,
    Symmetric,
}

/// Axis profiles of a diagonal control: `a11(cell i, j) = profile1[j] +
/// offset1[cell]` and `a22(cell i, j) = profile2[i] + offset2[cell]`.
/// Offsets are present only for a nonzero divergence target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolenoidalParam {
    /// One value per cell row (a function of x₂).
    pub profile1: Vec<f64>,
    /// One value per cell column (a function of x₁).
    pub profile2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<[Vec<f64>; 2]>,
}

/// A per-cell symmetric 2×2 coefficient field, entries `[a11, a12, a21, a22]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: GridSpec,
    form: Form,
    entries: Vec<[f64; 4]>,
    solenoidal: Option<SolenoidalParam>,
}

impl ControlField {
    /// A raw field. Only symmetry and finiteness are enforced here; class
    /// membership is the job of [`check_class`] and [`project_box`].
    pub fn from_entries(grid: GridSpec, entries: Vec<[f64; 4]>) -> Result<Self> {
        if entries.len() != grid.n_cells() {
            return Err(LabError::GridMismatch(format!(
                "{} entries for {} cells",
                entries.len(),
                grid.n_cells()
            )));
        }
        if let Some(c) = entries.iter().position(|e| e[1] != e[2] || e.iter().any(|v| !v.is_finite())) {
            return Err(LabError::InvalidParams(format!("cell {c} is not a finite symmetric matrix")));
        }
        let form = if entries.iter().all(|e| e[1] == 0.0) {
            Form::Diagonal
        } else {
            Form::Symmetric
        };
        Ok(ControlField {
            grid,
            form,
            entries,
            solenoidal: None,
        })
    }

    pub fn identity(grid: GridSpec) -> Self {
        ControlField {
            grid,
            form: Form::Diagonal,
            entries: vec![[1.0, 0.0, 0.0, 1.0]; grid.n_cells()],
            solenoidal: None,
        }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn form(&self) -> Form {
        self.form
    }

    #[inline]
    pub fn entries(&self) -> &[[f64; 4]] {
        &self.entries
    }

    #[inline]
    pub fn at(&self, cell: usize) -> &[f64; 4] {
        &self.entries[cell]
    }

    pub fn solenoidal(&self) -> Option<&SolenoidalParam> {
        self.solenoidal.as_ref()
    }

    pub fn is_diagonal(&self) -> bool {
        self.form == Form::Diagonal
    }

    /// Little-endian f64, cells row-major, `a11, a12, a21, a22` per cell.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * 32);
        for e in &self.entries {
            for v in e {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_binary(grid: GridSpec, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != grid.n_cells() * 32 {
            return Err(LabError::GridMismatch(format!(
                "{} bytes for {} cells",
                bytes.len(),
                grid.n_cells()
            )));
        }
        let entries = bytes
            .chunks_exact(32)
            .map(|c| {
                let mut e = [0.0; 4];
                for (k, v) in e.iter_mut().enumerate() {
                    *v = f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap());
                }
                e
            })
            .collect();
        Self::from_entries(grid, entries)
    }

    pub fn to_json(&self, params: &ClassParams) -> ControlJson {
        ControlJson {
            form: self.form,
            nx: self.grid.nx,
            ny: self.grid.ny,
            profiles: self.solenoidal.clone(),
            entries: if self.solenoidal.is_some() {
                None
            } else {
                Some(self.entries.clone())
            },
            params: params.clone(),
        }
    }
}

/// JSON form of a control: profiles when solenoidally parametrized, full
/// entries otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlJson {
    pub form: Form,
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<SolenoidalParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<[f64; 4]>>,
    pub params: ClassParams,
}

/// Cumulative offsets realizing nodal divergence targets `q1`, `q2`.
pub fn divergence_offsets(grid: &GridSpec, q1: &[f64], q2: &[f64]) -> Result<[Vec<f64>; 2]> {
    grid.check_len(q1.len(), "q1")?;
    grid.check_len(q2.len(), "q2")?;
    let h = grid.h;
    let mut o1 = vec![0.0; grid.n_cells()];
    let mut o2 = vec![0.0; grid.n_cells()];
    for j in 0..grid.cy() {
        let mut acc = 0.0;
        for i in 0..grid.cx() {
            if i > 0 {
                acc += h * q1[grid.node(i, j)];
            }
            o1[grid.cell(i, j)] = acc;
        }
    }
    for i in 0..grid.cx() {
        let mut acc = 0.0;
        for j in 0..grid.cy() {
            if j > 0 {
                acc += h * q2[grid.node(i, j)];
            }
            o2[grid.cell(i, j)] = acc;
        }
    }
    Ok([o1, o2])
}

/// Feasible intervals for each entry of `profile1` (per cell row) and
/// `profile2` (per cell column).
pub fn profile_bounds(
    grid: &GridSpec,
    params: &ClassParams,
    offsets: Option<&[Vec<f64>; 2]>,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    params.validate(Some(grid))?;
    let off = |k: usize, c: usize| offsets.map_or(0.0, |o| o[k][c]);
    let mut b1 = vec![(f64::NEG_INFINITY, f64::INFINITY); grid.cy()];
    let mut b2 = vec![(f64::NEG_INFINITY, f64::INFINITY); grid.cx()];
    for j in 0..grid.cy() {
        for i in 0..grid.cx() {
            let c = grid.cell(i, j);
            let (lo, hi) = params.diag_interval(c);
            if lo > hi {
                return Err(LabError::Infeasible(format!(
                    "cell ({i}, {j}): max(alpha, xi1) = {lo} > min(beta, xi2) = {hi}"
                )));
            }
            b1[j].0 = b1[j].0.max(lo - off(0, c));
            b1[j].1 = b1[j].1.min(hi - off(0, c));
            b2[i].0 = b2[i].0.max(lo - off(1, c));
            b2[i].1 = b2[i].1.min(hi - off(1, c));
        }
    }
    if let Some(j) = b1.iter().position(|b| b.0 > b.1) {
        return Err(LabError::Infeasible(format!("no feasible a11 on cell row {j}")));
    }
    if let Some(i) = b2.iter().position(|b| b.0 > b.1) {
        return Err(LabError::Infeasible(format!("no feasible a22 on cell column {i}")));
    }
    Ok((b1, b2))
}

fn build_diagonal(grid: GridSpec, param: SolenoidalParam) -> ControlField {
    let mut entries = vec![[0.0; 4]; grid.n_cells()];
    for j in 0..grid.cy() {
        for i in 0..grid.cx() {
            let c = grid.cell(i, j);
            let (o1, o2) = match &param.offsets {
                Some(o) => (o[0][c], o[1][c]),
                None => (0.0, 0.0),
            };
            entries[c] = [param.profile1[j] + o1, 0.0, 0.0, param.profile2[i] + o2];
        }
    }
    ControlField {
        grid,
        form: Form::Diagonal,
        entries,
        solenoidal: Some(param),
    }
}

/// Builds `diag(profile1(x₂), profile2(x₁))`, clamping the profiles into their
/// feasible intervals. Both rows are divergence free by construction.
pub fn make_diagonal_control(
    profile1: &[f64],
    profile2: &[f64],
    grid: &GridSpec,
    params: &ClassParams,
) -> Result<ControlField> {
    make_diagonal_control_with_target(profile1, profile2, None, grid, params)
}

/// Like [`make_diagonal_control`], with an optional nodal divergence target
/// `(q1, q2)` realized by cumulative offsets along each axis.
pub fn make_diagonal_control_with_target(
    profile1: &[f64],
    profile2: &[f64],
    target: Option<(&[f64], &[f64])>,
    grid: &GridSpec,
    params: &ClassParams,
) -> Result<ControlField> {
    if profile1.len() != grid.cy() || profile2.len() != grid.cx() {
        return Err(LabError::GridMismatch(format!(
            "profiles of length {}/{} on a grid with {}x{} cells",
            profile1.len(),
            profile2.len(),
            grid.cx(),
            grid.cy()
        )));
    }
    let offsets = match target {
        Some((q1, q2)) => Some(divergence_offsets(grid, q1, q2)?),
        None => None,
    };
    let (b1, b2) = profile_bounds(grid, params, offsets.as_ref())?;
    let clamp = |v: &[f64], b: &[(f64, f64)]| -> Vec<f64> { v.iter().zip(b).map(|(x, &(lo, hi))| x.clamp(lo, hi)).collect() };
    let param = SolenoidalParam {
        profile1: clamp(profile1, &b1),
        profile2: clamp(profile2, &b2),
        offsets,
    };
    Ok(build_diagonal(*grid, param))
}

/// Projects onto the box constraints. Solenoidally parametrized fields are
/// projected through their profiles so the structure survives.
pub fn project_box(u: &ControlField, params: &ClassParams) -> Result<ControlField> {
    if let Some(param) = &u.solenoidal {
        let (b1, b2) = profile_bounds(&u.grid, params, param.offsets.as_ref())?;
        let clamp = |v: &[f64], b: &[(f64, f64)]| -> Vec<f64> { v.iter().zip(b).map(|(x, &(lo, hi))| x.clamp(lo, hi)).collect() };
        let projected = SolenoidalParam {
            profile1: clamp(&param.profile1, &b1),
            profile2: clamp(&param.profile2, &b2),
            offsets: param.offsets.clone(),
        };
        if projected == *param {
            return Ok(u.clone());
        }
        return Ok(build_diagonal(u.grid, projected));
    }
    params.validate(Some(&u.grid))?;
    let entries = u
        .entries
        .iter()
        .enumerate()
        .map(|(c, e)| {
            let (dlo, dhi) = params.diag_interval(c);
            let off = if u.form == Form::Diagonal {
                0.0
            } else {
                let (olo, ohi) = params.offdiag_interval(c);
                e[1].clamp(olo, ohi)
            };
            [e[0].clamp(dlo, dhi), off, off, e[3].clamp(dlo, dhi)]
        })
        .collect();
    Ok(ControlField {
        grid: u.grid,
        form: u.form,
        entries,
        solenoidal: None,
    })
}

/// Outcome of sampling the growth, monotonicity and coercivity conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub growth_ok: bool,
    pub monotone_ok: bool,
    pub coercive_ok: bool,
    /// `beta - max |a_ij|`
    pub growth_margin: f64,
    /// First cell whose entries exceed `beta`.
    pub growth_violation: Option<usize>,
    /// Minimum over cells and samples of `(U(φ(ζ) - φ(η)), ζ - η)`.
    pub monotone_margin: f64,
    /// Minimum over cells and samples of `(U φ(ζ), ζ) - alpha |ζ|_p^p`.
    pub coercive_margin: f64,
    pub samples: usize,
    pub seed: u64,
}

impl ClassReport {
    pub fn all_ok(&self) -> bool {
        self.growth_ok && self.monotone_ok && self.coercive_ok
    }
}

pub const CLASS_TOL: f64 = 1e-10;

#[inline]
fn mat_vec(e: &[f64; 4], v: [f64; 2]) -> [f64; 2] {
    [e[0] * v[0] + e[1] * v[1], e[2] * v[0] + e[3] * v[1]]
}

/// Checks the class conditions: growth exactly, monotonicity and coercivity on
/// `n_samples` seeded pairs `ζ, η ∈ [-1, 1]²` at every cell.
pub fn check_class(u: &ControlField, params: &ClassParams, n_samples: usize, seed: u64) -> Result<ClassReport> {
    if n_samples == 0 {
        return Err(LabError::InvalidParams("check_class needs at least one sample".into()));
    }
    let p = params.p;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<([f64; 2], [f64; 2])> = (0..n_samples)
        .map(|_| {
            (
                [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)],
                [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)],
            )
        })
        .collect();
    let phi = |v: [f64; 2]| [signed_pow(v[0], p), signed_pow(v[1], p)];

    let growth_violation = u
        .entries
        .iter()
        .position(|e| e.iter().any(|a| a.abs() > params.beta));
    let max_entry = u
        .entries
        .iter()
        .flat_map(|e| e.iter())
        .fold(0.0f64, |m, a| m.max(a.abs()));

    let per_cell = par::map_slice(&u.entries, |e| {
        let mut mono = f64::INFINITY;
        let mut coer = f64::INFINITY;
        for (zeta, eta) in &pairs {
            let (pz, pe) = (phi(*zeta), phi(*eta));
            let diff = mat_vec(e, [pz[0] - pe[0], pz[1] - pe[1]]);
            mono = mono.min(diff[0] * (zeta[0] - eta[0]) + diff[1] * (zeta[1] - eta[1]));
            let uz = mat_vec(e, pz);
            let holder = abs_pow(zeta[0], p) + abs_pow(zeta[1], p);
            coer = coer.min(uz[0] * zeta[0] + uz[1] * zeta[1] - params.alpha * holder);
        }
        (mono, coer)
    });
    let monotone_margin = per_cell.iter().fold(f64::INFINITY, |m, c| m.min(c.0));
    let coercive_margin = per_cell.iter().fold(f64::INFINITY, |m, c| m.min(c.1));

    Ok(ClassReport {
        growth_ok: growth_violation.is_none(),
        monotone_ok: monotone_margin >= -CLASS_TOL,
        coercive_ok: coercive_margin >= -CLASS_TOL,
        growth_margin: params.beta - max_entry,
        growth_violation,
        monotone_margin,
        coercive_margin,
        samples: n_samples,
        seed,
    })
}

/// Discrete weak divergence of each row `u_i = (a_i1, a_i2)` at the nodes,
/// `div u_i (n) = -Σ_cells (u_i, ∇φ_n)` with the solver's cell gradient. Zero on
/// the box boundary.
pub fn row_divergence(u: &ControlField) -> [Vec<f64>; 2] {
    let g = &u.grid;
    let h = g.h;
    let mut d1 = vec![0.0; g.n_nodes()];
    let mut d2 = vec![0.0; g.n_nodes()];
    for j in 1..g.ny - 1 {
        for i in 1..g.nx - 1 {
            let here = u.at(g.cell(i, j));
            let left = u.at(g.cell(i - 1, j));
            let below = u.at(g.cell(i, j - 1));
            let k = g.node(i, j);
            d1[k] = (here[0] - left[0]) / h + (here[1] - below[1]) / h;
            d2[k] = (here[2] - left[2]) / h + (here[3] - below[3]) / h;
        }
    }
    [d1, d2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ClassParams {
        ClassParams::new(3.0, 0.5, 2.0).unwrap()
    }

    #[test]
    fn identity_profiles_give_identity_field() {
        let g = GridSpec::unit(9).unwrap();
        let p = ClassParams::new(2.0, 0.5, 2.0).unwrap();
        let u = make_diagonal_control(&[1.0; 8], &[1.0; 8], &g, &p).unwrap();
        assert!(u.entries().iter().all(|e| *e == [1.0, 0.0, 0.0, 1.0]));
        assert!(check_class(&u, &p, 200, 1).unwrap().all_ok());
    }

    #[test]
    fn linear_profile_is_constant_along_x1() {
        let g = GridSpec::unit(17).unwrap();
        let p = params();
        let prof1: Vec<f64> = (0..16).map(|j| 0.5 + 1.5 * j as f64 / 15.0).collect();
        let u = make_diagonal_control(&prof1, &[1.0; 16], &g, &p).unwrap();
        for j in 0..16 {
            for i in 1..16 {
                assert_eq!(u.at(g.cell(i, j))[0], u.at(g.cell(i - 1, j))[0]);
            }
        }
        let [d1, d2] = row_divergence(&u);
        assert!(d1.iter().chain(&d2).all(|&v| v == 0.0));
    }

    #[test]
    fn infeasible_box_is_reported() {
        let g = GridSpec::unit(5).unwrap();
        let p = params().with_xi(CellBound::Const(3.0), CellBound::Const(3.5));
        let err = make_diagonal_control(&[1.0; 4], &[1.0; 4], &g, &p).unwrap_err();
        assert!(matches!(err, LabError::Infeasible(_)));
    }

    #[test]
    fn projection_clamps_and_keeps_feasible_fields() {
        let g = GridSpec::unit(5).unwrap();
        let p = ClassParams::new(2.0, 0.5, 2.0).unwrap().with_xi(CellBound::Const(0.0), CellBound::Const(2.0));
        let u = ControlField::from_entries(g, vec![[10.0, 0.0, 0.0, 1.0]; 16]).unwrap();
        let v = project_box(&u, &p).unwrap();
        assert!(v.entries().iter().all(|e| e[0] == 2.0 && e[3] == 1.0));
        let w = project_box(&v, &p).unwrap();
        assert_eq!(v, w);

        let feasible = make_diagonal_control(&[0.7; 4], &[1.9; 4], &g, &p).unwrap();
        assert_eq!(project_box(&feasible, &p).unwrap(), feasible);
    }

    #[test]
    fn identity_coercivity_is_tight() {
        let g = GridSpec::unit(5).unwrap();
        let p = ClassParams::new(3.0, 1.0, 2.0).unwrap();
        let r = check_class(&ControlField::identity(g), &p, 500, 3).unwrap();
        assert!(r.all_ok());
        assert!(r.coercive_margin.abs() < 1e-15, "{}", r.coercive_margin);
    }

    #[test]
    fn oversized_offdiagonal_fails_growth() {
        let g = GridSpec::unit(5).unwrap();
        let p = params();
        let mut entries = vec![[1.0, 0.0, 0.0, 1.0]; 16];
        entries[6] = [1.0, 3.0, 3.0, 1.0];
        let u = ControlField::from_entries(g, entries).unwrap();
        let r = check_class(&u, &p, 10, 0).unwrap();
        assert!(!r.growth_ok);
        assert_eq!(r.growth_violation, Some(6));
    }

    #[test]
    fn linear_a11_has_unit_divergence() {
        let g = GridSpec::unit(17).unwrap();
        let entries = (0..g.n_cells())
            .map(|c| {
                let (i, j) = (c % g.cx(), c / g.cx());
                [g.cell_center(i, j).0, 0.0, 0.0, 0.0]
            })
            .collect();
        let u = ControlField::from_entries(g, entries).unwrap();
        let [d1, d2] = row_divergence(&u);
        for j in 1..16 {
            for i in 1..16 {
                assert!((d1[g.node(i, j)] - 1.0).abs() < 1e-12);
            }
        }
        assert!(d2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_symmetric_field_is_divergence_free() {
        let g = GridSpec::unit(9).unwrap();
        let u = ControlField::from_entries(g, vec![[1.5, 0.3, 0.3, 1.2]; 64]).unwrap();
        let [d1, d2] = row_divergence(&u);
        assert!(d1.iter().chain(&d2).all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_target_is_realized() {
        let g = GridSpec::unit(17).unwrap();
        let p = ClassParams::new(2.0, 0.1, 5.0).unwrap().with_xi(CellBound::Const(0.0), CellBound::Const(5.0));
        let q1 = g.sample(|x, _| 0.5 + x);
        let q2 = g.sample(|_, y| -0.3 * y);
        let u = make_diagonal_control_with_target(&[1.0; 16], &[2.0; 16], Some((&q1, &q2)), &g, &p).unwrap();
        let [d1, d2] = row_divergence(&u);
        for j in 1..16 {
            for i in 1..16 {
                let k = g.node(i, j);
                assert!((d1[k] - q1[k]).abs() < 1e-12);
                assert!((d2[k] - q2[k]).abs() < 1e-12);
            }
        }
        let v = project_box(&u, &p).unwrap();
        assert_eq!(row_divergence(&v)[0], d1);
    }

    #[test]
    fn binary_layout() {
        let g = GridSpec::unit(3).unwrap();
        let u = ControlField::from_entries(g, vec![[1.0, 0.5, 0.5, 2.0]; 4]).unwrap();
        let b = u.to_binary();
        assert_eq!(b.len(), 4 * 32);
        assert_eq!(&b[8..16], &0.5f64.to_le_bytes());
        assert_eq!(ControlField::from_binary(g, &b).unwrap(), u);
    }

    #[test]
    fn q_is_conjugate() {
        for p in [2.0, 2.5, 3.0, 4.0] {
            let c = ClassParams::new(p, 1.0, 1.0).unwrap();
            assert!((1.0 / c.p + 1.0 / c.q() - 1.0).abs() < 1e-15);
        }
        assert!(ClassParams::new(5.0, 1.0, 1.0).is_err());
        assert!(ClassParams::new(2.0, 2.0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn diagonal_controls_pass_class_check(
            seed in any::<u64>(),
            p in 2.0f64..=4.0,
            prof in proptest::collection::vec(0.0f64..=1.0, 16),
        ) {
            let g = GridSpec::unit(9).unwrap();
            let params = ClassParams::new(p, 0.4, 1.7).unwrap();
            let scale = |t: f64| 0.4 + 1.3 * t;
            let p1: Vec<f64> = prof[..8].iter().map(|&t| scale(t)).collect();
            let p2: Vec<f64> = prof[8..].iter().map(|&t| scale(t)).collect();
            let u = make_diagonal_control(&p1, &p2, &g, &params).unwrap();
            let r = check_class(&u, &params, 1000, seed).unwrap();
            prop_assert!(r.all_ok());
            prop_assert!(r.monotone_margin >= -1e-12);
        }

        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-3.0f64..5.0, 4 * 16),
            b in proptest::collection::vec(-3.0f64..5.0, 4 * 16),
        ) {
            let g = GridSpec::unit(5).unwrap();
            let params = ClassParams::new(2.0, 0.5, 2.0).unwrap()
                .with_xi(CellBound::Const(0.1), CellBound::Const(1.8));
            let field = |v: &[f64]| {
                let e = v.chunks(4).map(|c| [c[0], c[1], c[1], c[3]]).collect();
                ControlField::from_entries(g, e).unwrap()
            };
            let (u, v) = (field(&a), field(&b));
            let (pu, pv) = (project_box(&u, &params).unwrap(), project_box(&v, &params).unwrap());
            prop_assert_eq!(&project_box(&pu, &params).unwrap(), &pu);
            for c in 0..16 {
                for k in 0..4 {
                    let d = (pu.at(c)[k] - pv.at(c)[k]).abs();
                    prop_assert!(d <= (u.at(c)[k] - v.at(c)[k]).abs());
                }
            }
        }
    }
}
