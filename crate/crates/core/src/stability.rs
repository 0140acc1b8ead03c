//! Optimal values, states and Hammerstein solutions along a family of
//! perturbed domains, compared with the limit domain.
//!
//! All fields are zero-extended to the hold-all grid before comparing, so
//! distances are computed over the whole box.

use std::time::Instant;

use serde::Serialize;

use crate::control::{ClassParams, ControlField};
use crate::error::{LabError, Result};
use crate::geometry::{ekeland_distance, family_generate, hc_distance, Family, FamilyKind, FamilySpec, GridDomain};
use crate::grid::GridSpec;
use crate::hammerstein::{solve_on, HammersteinOptions, KernelSpec};
use crate::num::abs_pow;
use crate::optimizer::{optimize, OcpProblem, OcpResult};
use crate::par;
use crate::state::{solve_state, weighted_norm, wp_norm, EllipticProblem, SolverOptions};

/// Values outside the limit domain below this count as zero.
pub const SUPPORT_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub family: FamilySpec,
    /// Shared data; its domain is replaced by each member in turn.
    pub problem: OcpProblem,
    /// Require `g` and `z_d` to vanish outside the limit domain.
    pub support_condition: bool,
    /// Start each member's optimization from the previous optimum.
    pub warm_start: bool,
    /// Bound on the final value gap (relative to the limit value when it is
    /// positive).
    pub threshold: f64,
    /// Relative slack allowed when checking that gaps do not increase.
    pub slack: f64,
}

impl StudySpec {
    pub fn new(family: FamilySpec, problem: OcpProblem) -> Self {
        StudySpec {
            family,
            problem,
            support_condition: true,
            warm_start: true,
            threshold: 1e-2,
            slack: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRecord {
    pub eps: f64,
    pub value: f64,
    pub value_gap: f64,
    pub relative_gap: f64,
    pub hc_distance: f64,
    pub ekeland_distance: f64,
    pub state_gap: f64,
    pub z_gap: f64,
    pub iterations: usize,
    /// Value of the cold-start re-run, at the two extreme members.
    pub cold_value: Option<f64>,
    #[serde(skip)]
    pub runtime_ms: f64,
    #[serde(skip)]
    pub result: OcpResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyFailure {
    pub eps: f64,
    pub error: String,
    pub numerical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub limit_value: f64,
    pub records: Vec<StudyRecord>,
    pub warm_start: bool,
    pub value_convergence: bool,
    pub gaps_nonincreasing: bool,
    pub final_gap: f64,
    /// `limsup I_eps <= I_0 + slack` measured on the last member.
    pub realizing_direction: bool,
    pub failure: Option<StudyFailure>,
    #[serde(skip)]
    pub limit: OcpResult,
    #[serde(skip)]
    pub limit_runtime_ms: f64,
}

/// `(h² Σ_D |v|^p)^{1/p}` over every grid node.
pub fn grid_lp_norm(grid: &GridSpec, v: &[f64], p: f64) -> f64 {
    (grid.h * grid.h * v.iter().map(|&x| abs_pow(x, p)).sum::<f64>()).powf(1.0 / p)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// True if every term is at most `(1 + slack)` times its predecessor.
pub fn nonincreasing_within(seq: &[f64], slack: f64) -> bool {
    seq.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack) + 1e-14)
}

/// Zeroes `v` outside `domain`.
pub fn apply_support(v: &mut [f64], domain: &GridDomain) {
    for (k, x) in v.iter_mut().enumerate() {
        if !domain.contains(k) {
            *x = 0.0;
        }
    }
}

fn check_support(prob: &OcpProblem, limit: &GridDomain) -> Result<()> {
    for (v, name) in [(&prob.g, "g"), (&prob.z_d, "z_d")] {
        if let Some(k) = (0..v.len()).find(|&k| !limit.contains(k) && v[k].abs() > SUPPORT_TOL) {
            let (x, y) = limit.grid().node_xy(k);
            return Err(LabError::InvalidParams(format!(
                "support condition: {name} = {} at ({x}, {y}) outside the limit domain",
                v[k]
            )));
        }
    }
    Ok(())
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64() * 1e3)
}

fn solve_on_member(template: &OcpProblem, domain: &GridDomain, initial: Option<Vec<f64>>) -> Result<OcpResult> {
    let mut prob = template.clone();
    prob.domain = domain.clone();
    prob.initial = initial;
    optimize(&prob)
}

/// Generates the family on the template's grid and runs the study.
pub fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    let family = family_generate(&spec.family, spec.problem.grid())?;
    run_study_on(&family, spec)
}

/// Runs the study on an already rasterized family. A failure on a member stops
/// the study; the records computed so far are kept and the failure is named.
pub fn run_study_on(family: &Family, spec: &StudySpec) -> Result<StudyResult> {
    let template = &spec.problem;
    let grid = *template.grid();
    if spec.support_condition {
        check_support(template, &family.limit)?;
    }
    let (limit, limit_ms) = timed(|| solve_on_member(template, &family.limit, None));
    let limit = limit?;
    let i0 = limit.value;
    let p = template.params.p;

    let make_record = |k: usize, res: OcpResult, ms: f64| -> Result<StudyRecord> {
        let member = &family.members[k];
        let gap = (res.value - i0).abs();
        Ok(StudyRecord {
            eps: family.eps[k],
            value: res.value,
            value_gap: gap,
            relative_gap: if i0 > 0.0 { gap / i0 } else { gap },
            hc_distance: hc_distance(member, &family.limit)?,
            ekeland_distance: ekeland_distance(member, &family.limit)?,
            state_gap: wp_norm(&grid, &diff(&res.state.values, &limit.state.values), p),
            z_gap: grid_lp_norm(&grid, &diff(&res.hammerstein.z, &limit.hammerstein.z), p),
            iterations: res.iterates.len() - 1,
            cold_value: None,
            runtime_ms: ms,
            result: res,
        })
    };

    let n = family.members.len();
    let mut records = Vec::with_capacity(n);
    let mut failure = None;
    let fail = |k: usize, e: LabError| StudyFailure {
        eps: family.eps[k],
        numerical: e.is_numerical(),
        error: LabError::StudyAborted {
            eps: family.eps[k],
            source: Box::new(e),
        }
        .to_string(),
    };
    if spec.warm_start {
        let mut start = Some(limit.params.clone());
        for k in 0..n {
            let (res, ms) = timed(|| solve_on_member(template, &family.members[k], start.clone()));
            match res.and_then(|r| make_record(k, r, ms)) {
                Ok(rec) => {
                    start = Some(rec.result.params.clone());
                    records.push(rec);
                }
                Err(e) => {
                    failure = Some(fail(k, e));
                    break;
                }
            }
        }
        // guard against warm-start bias at the extreme members
        let last = records.len();
        for k in [0, n.saturating_sub(1)] {
            if k >= last || records[k].cold_value.is_some() {
                continue;
            }
            match solve_on_member(template, &family.members[k], None) {
                Ok(cold) => {
                    let cold_value = cold.value;
                    if cold_value < records[k].value {
                        let ms = records[k].runtime_ms;
                        records[k] = make_record(k, cold, ms)?;
                    }
                    records[k].cold_value = Some(cold_value);
                }
                Err(e) => {
                    failure = Some(fail(k, e));
                    break;
                }
            }
        }
    } else {
        let outcomes = par::map_range(n, |k| {
            let (res, ms) = timed(|| solve_on_member(template, &family.members[k], None));
            res.and_then(|r| make_record(k, r, ms))
        });
        for (k, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    failure = Some(fail(k, e));
                    break;
                }
            }
        }
    }

    let gaps: Vec<f64> = records.iter().map(|r| r.value_gap).collect();
    let gaps_nonincreasing = nonincreasing_within(&gaps, spec.slack);
    let final_gap = records.last().map_or(f64::NAN, |r| r.relative_gap);
    let realizing_direction = records.last().is_some_and(|r| r.value <= i0 + spec.slack * i0.abs().max(f64::MIN_POSITIVE));
    Ok(StudyResult {
        limit_value: i0,
        value_convergence: failure.is_none() && gaps_nonincreasing && final_gap <= spec.threshold,
        gaps_nonincreasing,
        final_gap,
        realizing_direction,
        warm_start: spec.warm_start,
        records,
        failure,
        limit,
        limit_runtime_ms: limit_ms,
    })
}

/// Data shared by the fixed-control checks.
#[derive(Debug, Clone)]
pub struct FixedData<'a> {
    pub params: &'a ClassParams,
    pub f: &'a [f64],
    pub g: &'a [f64],
    pub kernel: &'a KernelSpec,
    pub state_options: SolverOptions,
    pub hammerstein_options: HammersteinOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRecord {
    pub eps: f64,
    pub state_gap: f64,
    pub z_gap: f64,
    /// `|‖y_eps‖_U - ‖y‖_U|` in the control-weighted norm.
    pub norm_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub records: Vec<TransferRecord>,
    pub state_nonincreasing: bool,
    pub z_nonincreasing: bool,
    pub final_state_gap: f64,
    pub final_z_gap: f64,
    pub pass: bool,
}

fn forward(u: &ControlField, domain: &GridDomain, data: &FixedData) -> Result<(Vec<f64>, Vec<f64>)> {
    let prob = EllipticProblem::new(u.clone(), data.f.to_vec(), domain.clone(), data.params.clone())?.with_options(data.state_options.clone());
    let y = solve_state(&prob)?;
    let z = solve_on(domain, &y.values, data.g, data.kernel, data.params.p, &data.hammerstein_options)?;
    Ok((y.values, z.z))
}

/// Solves with one fixed control on every member and on the limit, and
/// compares the zero-extended states and Hammerstein solutions.
pub fn state_transfer_check(u: &ControlField, family: &Family, data: &FixedData, threshold: f64, slack: f64) -> Result<TransferReport> {
    let grid = *family.limit.grid();
    grid.ensure_same(u.grid())?;
    let p = data.params.p;
    let (y0, z0) = forward(u, &family.limit, data)?;
    let n0 = weighted_norm(u, &y0, p);
    let outs = par::map_range(family.members.len(), |k| forward(u, &family.members[k], data));
    let mut records = Vec::with_capacity(outs.len());
    for (k, out) in outs.into_iter().enumerate() {
        let (y, z) = out?;
        records.push(TransferRecord {
            eps: family.eps[k],
            state_gap: wp_norm(&grid, &diff(&y, &y0), p),
            z_gap: grid_lp_norm(&grid, &diff(&z, &z0), p),
            norm_gap: (weighted_norm(u, &y, p) - n0).abs(),
        });
    }
    let sg: Vec<f64> = records.iter().map(|r| r.state_gap).collect();
    let zg: Vec<f64> = records.iter().map(|r| r.z_gap).collect();
    let (fs, fz) = (sg.last().copied().unwrap_or(0.0), zg.last().copied().unwrap_or(0.0));
    let (sm, zm) = (nonincreasing_within(&sg, slack), nonincreasing_within(&zg, slack));
    Ok(TransferReport {
        pass: sm && zm && fs <= threshold && fz <= threshold,
        records,
        state_nonincreasing: sm,
        z_nonincreasing: zm,
        final_state_gap: fs,
        final_z_gap: fz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoscoRecord {
    pub eps: f64,
    pub y_gap: f64,
    pub z_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoscoReport {
    pub records: Vec<MoscoRecord>,
    pub y_nonincreasing: bool,
    pub z_nonincreasing: bool,
    /// `None` for families that may be unstable, where the run is recorded
    /// without a verdict.
    pub verdict: Option<bool>,
}

/// Restricts `y` to `member` and relaxes it once at the member nodes next to
/// removed nodes (weighted Jacobi towards the neighbor mean, weight 2/3).
pub fn approximate_in(y: &[f64], limit: &GridDomain, member: &GridDomain) -> Vec<f64> {
    let g = member.grid();
    let masked = member.restrict(y);
    let mut out = masked.clone();
    for k in member.nodes() {
        let (i, j) = g.node_ij(k);
        let nbrs = [g.node(i - 1, j), g.node(i + 1, j), g.node(i, j - 1), g.node(i, j + 1)];
        if nbrs.iter().any(|&n| limit.contains(n) && !member.contains(n)) {
            let mean = nbrs.iter().map(|&n| masked[n]).sum::<f64>() / 4.0;
            out[k] = masked[k] + 2.0 / 3.0 * (mean - masked[k]);
        }
    }
    out
}

/// Constructive check of the first Mosco condition: approximates the limit
/// state inside each member and measures the distance, then re-solves the
/// Hammerstein equation on the member with the approximation.
pub fn mosco_m1_probe(y: &[f64], family: &Family, family_kind: Option<&FamilyKind>, data: &FixedData, slack: f64) -> Result<MoscoReport> {
    let grid = *family.limit.grid();
    grid.check_len(y.len(), "y")?;
    let p = data.params.p;
    let y = family.limit.restrict(y);
    let z0 = solve_on(&family.limit, &y, data.g, data.kernel, p, &data.hammerstein_options)?.z;
    let outs = par::map_range(family.members.len(), |k| -> Result<MoscoRecord> {
        let member = &family.members[k];
        let approx = approximate_in(&y, &family.limit, member);
        let z = solve_on(member, &approx, data.g, data.kernel, p, &data.hammerstein_options)?.z;
        Ok(MoscoRecord {
            eps: family.eps[k],
            y_gap: wp_norm(&grid, &diff(&approx, &y), p),
            z_gap: grid_lp_norm(&grid, &diff(&z, &z0), p),
        })
    });
    let records = outs.into_iter().collect::<Result<Vec<_>>>()?;
    let yg: Vec<f64> = records.iter().map(|r| r.y_gap).collect();
    let zg: Vec<f64> = records.iter().map(|r| r.z_gap).collect();
    let (ym, zm) = (nonincreasing_within(&yg, slack), nonincreasing_within(&zg, slack));
    let verdict = match family_kind {
        Some(FamilyKind::OscillatingCrack { .. }) => None,
        _ => Some(ym && zm),
    };
    Ok(MoscoReport {
        records,
        y_nonincreasing: ym,
        z_nonincreasing: zm,
        verdict,
    })
}
