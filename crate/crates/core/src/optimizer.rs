//! Projected gradient descent for the tracking cost `∫_Ω |z - z_d|^p` over
//! diagonal solenoidal controls, through the state and Hammerstein maps.
//!
//! The search variables are the two axis profiles of the control, optionally
//! grouped into `segments` of consecutive cell rows/columns sharing one value.

use serde::{Deserialize, Serialize};

use crate::control::{make_diagonal_control_with_target, profile_bounds, ClassParams, ControlField};
use crate::error::{LabError, Result};
use crate::geometry::GridDomain;
use crate::grid::GridSpec;
use crate::hammerstein::{apply_b, solve_on, HammersteinOptions, HammersteinSolution, KernelSpec};
use crate::linalg::pcg;
use crate::num::{abs_pow, dot, max_abs};
use crate::par;
use crate::state::{assemble_linear, solve_state, EllipticProblem, SolverOptions, StateField, Unknowns};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Adjoint for `p = 2`, finite differences otherwise.
    #[default]
    Auto,
    FiniteDifference,
    Adjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Stop once `‖P(x - ∇J) - x‖_∞` drops below this.
    pub tol: f64,
    pub gradient: GradientMode,
    pub fd_step: f64,
    pub armijo: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 100,
            tol: 1e-10,
            gradient: GradientMode::Auto,
            fd_step: 1e-5,
            armijo: 1e-4,
        }
    }
}

/// Default inner tolerances are tight so that finite differences of the cost
/// stay meaningful.
pub fn inner_state_options() -> SolverOptions {
    SolverOptions {
        tol: 1e-10,
        ..SolverOptions::default()
    }
}

pub fn inner_hammerstein_options() -> HammersteinOptions {
    HammersteinOptions {
        tol: 1e-12,
        check_uniqueness: false,
        ..HammersteinOptions::default()
    }
}

#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub domain: GridDomain,
    pub params: ClassParams,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub z_d: Vec<f64>,
    pub kernel: KernelSpec,
    /// Nodal divergence targets `(q1, q2)` for the two control rows.
    pub divergence_target: Option<[Vec<f64>; 2]>,
    /// Number of free values for `profile1` and `profile2`; full resolution
    /// when absent.
    pub segments: Option<[usize; 2]>,
    /// Starting point; the box midpoint when absent.
    pub initial: Option<Vec<f64>>,
    pub options: OptimizerOptions,
    pub state_options: SolverOptions,
    pub hammerstein_options: HammersteinOptions,
}

impl OcpProblem {
    pub fn new(domain: GridDomain, params: ClassParams, f: Vec<f64>, g: Vec<f64>, z_d: Vec<f64>, kernel: KernelSpec) -> Result<Self> {
        let prob = OcpProblem {
            domain,
            params,
            f,
            g,
            z_d,
            kernel,
            divergence_target: None,
            segments: None,
            initial: None,
            options: OptimizerOptions::default(),
            state_options: inner_state_options(),
            hammerstein_options: inner_hammerstein_options(),
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn grid(&self) -> &GridSpec {
        self.domain.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.grid();
        for (v, name) in [(&self.f, "f"), (&self.g, "g"), (&self.z_d, "z_d")] {
            g.check_len(v.len(), name)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(LabError::InvalidParams(format!("{name} has non-finite values")));
            }
        }
        self.kernel.validate()?;
        self.params.validate(Some(g))?;
        if let Some([k1, k2]) = self.segments {
            if k1 == 0 || k2 == 0 || k1 > g.cy() || k2 > g.cx() {
                return Err(LabError::InvalidParams(format!(
                    "segments ({k1}, {k2}) must lie in 1..={} x 1..={}",
                    g.cy(),
                    g.cx()
                )));
            }
        }
        let (lo, _) = self.bounds()?;
        if let Some(x0) = &self.initial {
            if x0.len() != lo.len() {
                return Err(LabError::InvalidParams(format!("initial point has {} entries, expected {}", x0.len(), lo.len())));
            }
        }
        Ok(())
    }

    fn segment_counts(&self) -> [usize; 2] {
        self.segments.unwrap_or([self.grid().cy(), self.grid().cx()])
    }

    pub fn dimension(&self) -> usize {
        let [k1, k2] = self.segment_counts();
        k1 + k2
    }

    /// Segment of `profile1` entry `j` (or `profile2` entry `i`).
    fn seg(n: usize, k: usize, j: usize) -> usize {
        j * k / n
    }

    /// Box constraints on the reduced variables.
    pub fn bounds(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.grid();
        let offsets = match &self.divergence_target {
            Some([q1, q2]) => Some(crate::control::divergence_offsets(g, q1, q2)?),
            None => None,
        };
        let (b1, b2) = profile_bounds(g, &self.params, offsets.as_ref())?;
        let [k1, k2] = self.segment_counts();
        let mut lo = vec![f64::NEG_INFINITY; k1 + k2];
        let mut hi = vec![f64::INFINITY; k1 + k2];
        for (j, b) in b1.iter().enumerate() {
            let s = Self::seg(g.cy(), k1, j);
            lo[s] = lo[s].max(b.0);
            hi[s] = hi[s].min(b.1);
        }
        for (i, b) in b2.iter().enumerate() {
            let s = k1 + Self::seg(g.cx(), k2, i);
            lo[s] = lo[s].max(b.0);
            hi[s] = hi[s].min(b.1);
        }
        if let Some(s) = (0..lo.len()).find(|&s| lo[s] > hi[s]) {
            return Err(LabError::Infeasible(format!("segment {s} has an empty feasible interval")));
        }
        Ok((lo, hi))
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (lo, hi) = self.bounds()?;
        Ok(x.iter().zip(lo.iter().zip(&hi)).map(|(v, (&l, &u))| v.clamp(l, u)).collect())
    }

    /// Expands reduced variables into the two full profiles.
    pub fn profiles(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.grid();
        let [k1, k2] = self.segment_counts();
        if x.len() != k1 + k2 {
            return Err(LabError::InvalidParams(format!("expected {} parameters, got {}", k1 + k2, x.len())));
        }
        let p1 = (0..g.cy()).map(|j| x[Self::seg(g.cy(), k1, j)]).collect();
        let p2 = (0..g.cx()).map(|i| x[k1 + Self::seg(g.cx(), k2, i)]).collect();
        Ok((p1, p2))
    }

    pub fn control(&self, x: &[f64]) -> Result<ControlField> {
        let (p1, p2) = self.profiles(x)?;
        let target = self.divergence_target.as_ref().map(|[a, b]| (a.as_slice(), b.as_slice()));
        make_diagonal_control_with_target(&p1, &p2, target, self.grid(), &self.params)
    }

    pub fn initial_point(&self) -> Result<Vec<f64>> {
        match &self.initial {
            Some(x) => self.project(x),
            None => {
                let (lo, hi) = self.bounds()?;
                Ok(lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect())
            }
        }
    }
}

/// `h² Σ_{nodes in Ω} |z - z_d|^p`.
pub fn eval_cost(z: &[f64], z_d: &[f64], p: f64, domain: &GridDomain) -> f64 {
    let h = domain.grid().h;
    let s: f64 = z
        .iter()
        .zip(z_d)
        .zip(domain.mask())
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| abs_pow(a - b, p))
        .sum();
    h * h * s
}

/// The triplet `(U, y, z)` at a parameter vector and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub params: Vec<f64>,
    pub value: f64,
    pub control: ControlField,
    pub state: StateField,
    pub hammerstein: HammersteinSolution,
}

fn evaluate(x: &[f64], prob: &OcpProblem, hopts: &HammersteinOptions) -> Result<Evaluation> {
    let control = prob.control(x)?;
    let state = solve_state(
        &EllipticProblem::new(control.clone(), prob.f.clone(), prob.domain.clone(), prob.params.clone())?.with_options(prob.state_options.clone()),
    )?;
    let hammerstein = solve_on(&prob.domain, &state.values, &prob.g, &prob.kernel, prob.params.p, hopts)?;
    let value = eval_cost(&hammerstein.z, &prob.z_d, prob.params.p, &prob.domain);
    Ok(Evaluation {
        params: x.to_vec(),
        value,
        control,
        state,
        hammerstein,
    })
}

fn annotate(x: &[f64], e: LabError) -> LabError {
    LabError::AtParams {
        params: x.to_vec(),
        source: Box::new(e),
    }
}

/// Cost of the composed map `x -> U -> y -> z`.
pub fn reduced_objective(x: &[f64], prob: &OcpProblem) -> Result<Evaluation> {
    evaluate(x, prob, &prob.hammerstein_options).map_err(|e| annotate(x, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdGradient {
    pub grad: Vec<f64>,
    /// Coordinates where the stencil would leave the box and a one-sided
    /// difference was used.
    pub one_sided: Vec<bool>,
}

/// Central finite differences, coordinates evaluated concurrently.
pub fn fd_gradient(x: &[f64], prob: &OcpProblem, step: f64) -> Result<FdGradient> {
    let (lo, hi) = prob.bounds()?;
    let value = |v: &[f64]| reduced_objective(v, prob).map(|e| e.value);
    let base = if x.iter().zip(lo.iter().zip(&hi)).any(|(v, (l, u))| v - step < *l || v + step > *u) {
        Some(value(x)?)
    } else {
        None
    };
    let parts = par::map_range(x.len(), |i| -> Result<(f64, bool)> {
        let shifted = |d: f64| {
            let mut v = x.to_vec();
            v[i] += d;
            v
        };
        if x[i] - step >= lo[i] && x[i] + step <= hi[i] {
            Ok(((value(&shifted(step))? - value(&shifted(-step))?) / (2.0 * step), false))
        } else if x[i] + step <= hi[i] {
            Ok(((value(&shifted(step))? - base.expect("computed")) / step, true))
        } else if x[i] - step >= lo[i] {
            Ok(((base.expect("computed") - value(&shifted(-step))?) / step, true))
        } else {
            Ok((0.0, true))
        }
    });
    let mut grad = Vec::with_capacity(x.len());
    let mut one_sided = Vec::with_capacity(x.len());
    for r in parts {
        let (gi, f) = r?;
        grad.push(gi);
        one_sided.push(f);
    }
    Ok(FdGradient { grad, one_sided })
}

/// Exact gradient of the discrete cost for `p = 2` from two adjoint solves:
/// `(I + B) μ = 2 h² (z - z_d)` and `K λ = B μ`, then
/// `∂J/∂a11(c) = h² D₁λ D₁y` (and likewise for `a22`), summed per segment.
pub fn adjoint_gradient_p2(x: &[f64], prob: &OcpProblem) -> Result<Vec<f64>> {
    if prob.params.p != 2.0 {
        return Err(LabError::Unsupported(format!("adjoint gradient needs p = 2, got p = {}", prob.params.p)));
    }
    let ev = reduced_objective(x, prob)?;
    adjoint_from(&ev, prob).map_err(|e| annotate(x, e))
}

fn adjoint_from(ev: &Evaluation, prob: &OcpProblem) -> Result<Vec<f64>> {
    let d = &prob.domain;
    let g = *d.grid();
    let h2 = g.h * g.h;
    let unk = Unknowns::new(d);
    let n = g.n_nodes();
    let scatter = |w: &[f64]| unk.scatter(w, n);

    // (I + B) μ = 2 h² (z - z_d)
    let rhs: Vec<f64> = unk.nodes.iter().map(|&k| 2.0 * h2 * (ev.hammerstein.z[k] - prob.z_d[k])).collect();
    let bdiag = prob.kernel.diagonal(&g);
    let diag = vec![1.0 + bdiag; rhs.len()];
    let mut mu = vec![0.0; rhs.len()];
    let tol = 1e-14 * max_abs(&rhs).max(f64::MIN_POSITIVE);
    let st = pcg(
        |w, out| {
            let bw = apply_b(&prob.kernel, &scatter(w), d);
            for (u, &k) in unk.nodes.iter().enumerate() {
                out[u] = w[u] + bw[k];
            }
        },
        &diag,
        &rhs,
        &mut mu,
        tol,
        10_000,
    );
    if !st.converged {
        return Err(LabError::NoConvergence {
            solver: "Hammerstein adjoint",
            iterations: st.iterations,
            residual: st.residual,
        });
    }
    let bmu = unk.gather(&apply_b(&prob.kernel, &scatter(&mu), d));

    // K λ = B μ
    let k = assemble_linear(d, &unk, |c| *ev.control.at(c), |_| 1.0);
    let mut lam = vec![0.0; bmu.len()];
    let tol = 1e-14 * max_abs(&bmu).max(f64::MIN_POSITIVE);
    let st = pcg(|v, out| k.mul(v, out), &k.diag(), &bmu, &mut lam, tol, 20_000);
    if !st.converged {
        return Err(LabError::NoConvergence {
            solver: "state adjoint",
            iterations: st.iterations,
            residual: st.residual,
        });
    }
    let lam = scatter(&lam);
    let y = &ev.state.values;

    let [k1, k2] = prob.segment_counts();
    let mut grad = vec![0.0; k1 + k2];
    let h = g.h;
    for j in 0..g.cy() {
        for i in 0..g.cx() {
            let (n00, n10, n01) = (g.node(i, j), g.node(i + 1, j), g.node(i, j + 1));
            let d1 = h2 * (lam[n10] - lam[n00]) / h * (y[n10] - y[n00]) / h;
            let d2 = h2 * (lam[n01] - lam[n00]) / h * (y[n01] - y[n00]) / h;
            grad[OcpProblem::seg(g.cy(), k1, j)] += d1;
            grad[k1 + OcpProblem::seg(g.cx(), k2, i)] += d2;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ProjectedGradient,
    MaxIterations,
    /// The line search could not decrease the cost.
    Stalled,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpResult {
    pub params: Vec<f64>,
    pub control: ControlField,
    pub state: StateField,
    pub hammerstein: HammersteinSolution,
    pub value: f64,
    pub iterates: Vec<f64>,
    pub kkt_residual: f64,
    pub stop: StopReason,
    pub evaluations: usize,
}

fn gradient(x: &[f64], ev: &Evaluation, prob: &OcpProblem) -> Result<(Vec<f64>, usize)> {
    let adjoint = match prob.options.gradient {
        GradientMode::Auto => prob.params.p == 2.0,
        GradientMode::Adjoint => true,
        GradientMode::FiniteDifference => false,
    };
    if adjoint {
        if prob.params.p != 2.0 {
            return Err(LabError::Unsupported("adjoint gradient needs p = 2".into()));
        }
        Ok((adjoint_from(ev, prob).map_err(|e| annotate(x, e))?, 0))
    } else {
        Ok((fd_gradient(x, prob, prob.options.fd_step)?.grad, 2 * x.len()))
    }
}

fn projected_step(x: &[f64], grad: &[f64], t: f64, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|i| (x[i] - t * grad[i]).clamp(lo[i], hi[i])).collect()
}

fn finish(ev: Evaluation, prob: &OcpProblem, iterates: Vec<f64>, kkt: f64, stop: StopReason, evaluations: usize) -> Result<OcpResult> {
    // final report carries the full Hammerstein diagnostics
    let hammerstein = solve_on(&prob.domain, &ev.state.values, &prob.g, &prob.kernel, prob.params.p, &HammersteinOptions {
        check_uniqueness: true,
        ..prob.hammerstein_options.clone()
    })
    .map_err(|e| annotate(&ev.params, e))?;
    Ok(OcpResult {
        params: ev.params,
        control: ev.control,
        state: ev.state,
        value: ev.value,
        hammerstein: HammersteinSolution { z: ev.hammerstein.z, ..hammerstein },
        iterates,
        kkt_residual: kkt,
        stop,
        evaluations,
    })
}

/// Projected gradient descent with Armijo backtracking.
pub fn optimize(prob: &OcpProblem) -> Result<OcpResult> {
    prob.validate()?;
    let (lo, hi) = prob.bounds()?;
    let opts = &prob.options;
    let mut ev = reduced_objective(&prob.initial_point()?, prob)?;
    let mut evaluations = 1;
    let mut iterates = vec![ev.value];
    let mut t_prev: Option<f64> = None;
    let width = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0f64, f64::max);
    let mut kkt;
    let mut stop = StopReason::MaxIterations;
    let mut it = 0;
    loop {
        let x = ev.params.clone();
        let (grad, extra) = gradient(&x, &ev, prob)?;
        evaluations += extra;
        let pg = projected_step(&x, &grad, 1.0, &lo, &hi);
        kkt = x.iter().zip(&pg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if kkt <= opts.tol || max_abs(&grad) == 0.0 {
            stop = StopReason::ProjectedGradient;
            break;
        }
        if it >= opts.max_iter {
            break;
        }
        it += 1;
        let mut t = match t_prev {
            Some(t) => 4.0 * t,
            None => width.max(1e-12) / max_abs(&grad),
        };
        let mut accepted = None;
        for _ in 0..60 {
            let xt = projected_step(&x, &grad, t, &lo, &hi);
            if xt == x {
                break;
            }
            let trial = reduced_objective(&xt, prob)?;
            evaluations += 1;
            let decrease: f64 = dot(&grad, &x.iter().zip(&xt).map(|(a, b)| a - b).collect::<Vec<_>>());
            if trial.value <= ev.value - opts.armijo * decrease && trial.value < ev.value {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                t_prev = Some(t);
                ev = next;
                iterates.push(ev.value);
            }
            None => {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    finish(ev, prob, iterates, kkt, stop, evaluations)
}

/// Exhaustive tensor-grid search over the box, `resolution` points per axis.
pub fn brute_force_small(prob: &OcpProblem, resolution: usize) -> Result<OcpResult> {
    prob.validate()?;
    let dim = prob.dimension();
    if dim > 3 {
        return Err(LabError::Unsupported(format!("brute force needs at most 3 parameters, got {dim}")));
    }
    if !(1..=64).contains(&resolution) {
        return Err(LabError::InvalidParams(format!("resolution must lie in 1..=64, got {resolution}")));
    }
    let (lo, hi) = prob.bounds()?;
    let total = resolution.pow(dim as u32);
    let point = |mut idx: usize| -> Vec<f64> {
        (0..dim)
            .map(|d| {
                let k = idx % resolution;
                idx /= resolution;
                if resolution == 1 {
                    0.5 * (lo[d] + hi[d])
                } else {
                    lo[d] + (hi[d] - lo[d]) * k as f64 / (resolution - 1) as f64
                }
            })
            .collect()
    };
    let values = par::map_range(total, |i| reduced_objective(&point(i), prob).map(|e| e.value));
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        let v = v?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let ev = reduced_objective(&point(best.0), prob)?;
    let value = ev.value;
    finish(ev, prob, vec![value], f64::NAN, StopReason::Exhaustive, total + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::bisect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_node(p: f64, z_d: f64) -> OcpProblem {
        let g = GridSpec::unit(3).unwrap();
        let d = GridDomain::full_interior(g);
        let center = |v: f64| {
            let mut x = vec![0.0; 9];
            x[4] = v;
            x
        };
        let mut prob = OcpProblem::new(d, ClassParams::new(p, 0.5, 2.0).unwrap(), center(4.0), center(1.0), center(z_d), KernelSpec::gaussian(0.2, 1.0, 0.5)).unwrap();
        prob.segments = Some([1, 1]);
        prob
    }

    #[test]
    fn cost_basics() {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let z = g.sample(|x, y| x * y);
        assert_eq!(eval_cost(&z, &z, 3.0, &d), 0.0);
        let z1: Vec<f64> = z.iter().map(|v| v + 1.0).collect();
        let c = eval_cost(&z1, &z, 2.0, &d);
        assert!((c - d.node_count() as f64 * g.h * g.h).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a: Vec<f64> = (0..81).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..81).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let zd = vec![0.2; 81];
            assert!(eval_cost(&m, &zd, 3.0, &d) <= 0.5 * (eval_cost(&a, &zd, 3.0, &d) + eval_cost(&b, &zd, 3.0, &d)) + 1e-15);
        }
    }

    #[test]
    fn cost_is_continuous_along_strong_sequences() {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let z = g.sample(|x, y| (x - y).cos());
        let zd = vec![0.3; 81];
        let bump = g.sample(|x, y| (9.0 * x).sin() * y);
        let tail: Vec<f64> = (20..30)
            .map(|k| {
                let zk: Vec<f64> = z.iter().zip(&bump).map(|(a, b)| a + 0.5f64.powi(k) * b).collect();
                eval_cost(&zk, &zd, 3.0, &d)
            })
            .collect();
        let liminf = tail.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(eval_cost(&z, &zd, 3.0, &d) <= liminf + 1e-10);
    }

    #[test]
    fn one_node_objective_matches_hand_chain() {
        let prob = one_node(2.0, 0.1);
        let h = 0.5f64;
        let b = 1.0 * h * h + 0.5;
        for x in [[0.5, 0.5], [1.0, 1.7], [2.0, 0.8]] {
            let y = 4.0 * h * h / (2.0 * x[0] + 2.0 * x[1] + h * h);
            let z = (1.0 - b * y) / (1.0 + b);
            let expect = h * h * (z - 0.1f64).powi(2);
            let ev = reduced_objective(&x, &prob).unwrap();
            assert!((ev.value - expect).abs() < 1e-13, "{} vs {expect}", ev.value);
        }
        // p = 4: scalar state and Hammerstein equations by bisection
        let prob = one_node(4.0, 0.1);
        let x = [1.3, 0.7];
        let y = bisect(|v| (2.0 * x[0] + 2.0 * x[1]) * h * (v / h).powi(3) + h * h * (v.powi(3) - 4.0), 0.0, 10.0);
        let z = bisect(|v| v + b * (y.powi(3) + v.powi(3)) - 1.0, -10.0, 10.0);
        let expect = h * h * (z - 0.1f64).powi(4);
        let ev = reduced_objective(&x, &prob).unwrap();
        assert!((ev.value - expect).abs() < 1e-12, "{} vs {expect}", ev.value);
    }

    #[test]
    fn self_tracking_is_zero_with_zero_gradient() {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let params = ClassParams::new(2.0, 0.5, 2.0).unwrap();
        let mut prob = OcpProblem::new(d, params, vec![3.0; 81], g.sample(|x, _| x), vec![0.0; 81], KernelSpec::gaussian(0.2, 1.0, 0.2)).unwrap();
        prob.segments = Some([2, 3]);
        let x = [0.8, 1.5, 1.1, 0.6, 1.9];
        prob.z_d = reduced_objective(&x, &prob).unwrap().hammerstein.z;
        assert_eq!(reduced_objective(&x, &prob).unwrap().value, 0.0);
        assert!(max_abs(&adjoint_gradient_p2(&x, &prob).unwrap()) <= 1e-8);
    }

    #[test]
    fn objective_nonnegative_on_random_points() {
        let mut prob = one_node(3.0, 0.4);
        prob.segments = None;
        let (lo, hi) = prob.bounds().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..=*b)).collect();
            let v = reduced_objective(&x, &prob).unwrap().value;
            assert!(v.is_finite() && v >= 0.0);
        }
    }

    fn random_problem(rng: &mut ChaCha8Rng, p: f64) -> OcpProblem {
        let g = GridSpec::unit(9).unwrap();
        let d = GridDomain::full_interior(g);
        let (a, b, c) = (rng.gen_range(1.0..5.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
        let f = g.sample(|x, y| a + b * x * y);
        let gg = g.sample(|x, y| c + x - y);
        let zd = g.sample(|x, y| 0.3 * (x + y));
        let mut prob = OcpProblem::new(d, ClassParams::new(p, 0.5, 2.0).unwrap(), f, gg, zd, KernelSpec::gaussian(rng.gen_range(0.1..0.3), 1.0, rng.gen_range(0.1..0.5))).unwrap();
        prob.segments = Some([3, 2]);
        prob
    }

    #[test]
    fn adjoint_agrees_with_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let prob = random_problem(&mut rng, 2.0);
            let (lo, hi) = prob.bounds().unwrap();
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(a + 0.01..b - 0.01)).collect();
            let adj = adjoint_gradient_p2(&x, &prob).unwrap();
            let fd = fd_gradient(&x, &prob, 1e-5).unwrap();
            let scale = max_abs(&adj);
            for (a, f) in adj.iter().zip(&fd.grad) {
                assert!((a - f).abs() <= 1e-4 * scale, "{adj:?} vs {:?}", fd.grad);
            }
        }
        assert!(matches!(adjoint_gradient_p2(&[1.0; 5], &random_problem(&mut rng, 3.0)), Err(LabError::Unsupported(_))));
    }

    #[test]
    fn directional_derivative_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prob = random_problem(&mut rng, 3.0);
        let x = vec![1.2, 0.9, 1.4, 1.0, 1.6];
        let v = vec![0.3, -0.2, 0.5, 0.1, -0.4];
        let g = fd_gradient(&x, &prob, 1e-5).unwrap().grad;
        let dd = dot(&g, &v);
        let j0 = reduced_objective(&x, &prob).unwrap().value;
        let t = 1e-4;
        let xt: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + t * b).collect();
        let ratio = (reduced_objective(&xt, &prob).unwrap().value - j0) / t / dd;
        assert!((ratio - 1.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn fd_uses_one_sided_differences_at_the_box_edge() {
        let prob = one_node(2.0, 0.1);
        let fd = fd_gradient(&[0.5, 1.0], &prob, 1e-5).unwrap();
        assert_eq!(fd.one_sided, vec![true, false]);
        let adj = adjoint_gradient_p2(&[0.5, 1.0], &prob).unwrap();
        assert!((fd.grad[0] - adj[0]).abs() < 1e-4 * adj[0].abs());
    }

    #[test]
    fn rows_outside_the_domain_have_no_influence() {
        let g = GridSpec::unit(9).unwrap();
        let mut mask = vec![false; 81];
        for j in 1..4 {
            for i in 1..8 {
                mask[g.node(i, j)] = true;
            }
        }
        let d = GridDomain::from_mask(g, mask).unwrap();
        let mut prob = OcpProblem::new(d, ClassParams::new(2.0, 0.5, 2.0).unwrap(), vec![2.0; 81], vec![1.0; 81], vec![0.0; 81], KernelSpec::gaussian(0.2, 1.0, 0.3)).unwrap();
        prob.segments = Some([8, 1]);
        let x = vec![1.0; 9];
        let adj = adjoint_gradient_p2(&x, &prob).unwrap();
        let fd = fd_gradient(&x, &prob, 1e-5).unwrap();
        for j in 4..8 {
            assert_eq!(adj[j], 0.0);
            assert_eq!(fd.grad[j], 0.0);
        }
        assert!(adj[1] != 0.0);
    }

    #[test]
    fn zero_iterations_returns_initial_point() {
        let mut prob = one_node(2.0, 0.1);
        prob.options.max_iter = 0;
        let res = optimize(&prob).unwrap();
        assert_eq!(res.params, prob.initial_point().unwrap());
        assert_eq!(res.value, reduced_objective(&res.params, &prob).unwrap().value);
        assert_eq!(res.iterates.len(), 1);
    }

    #[test]
    fn optimize_matches_brute_force_on_one_node() {
        let h = 0.5f64;
        let b = h * h + 0.5;
        // reachable target on the anti-diagonal a11 + a22 = alpha + beta
        let y = 4.0 * h * h / (2.0 * 2.5 + h * h);
        let target = (1.0 - b * y) / (1.0 + b);
        for zd in [target, -1.0, 5.0] {
            let prob = one_node(2.0, zd);
            let opt = optimize(&prob).unwrap();
            let bf = brute_force_small(&prob, 64).unwrap();
            assert!(opt.value <= bf.value + 1e-6);
            assert!((opt.value - bf.value).abs() <= 1e-6, "{} vs {}", opt.value, bf.value);
            for w in opt.iterates.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn inverse_crime_recovers_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for p in [2.0, 3.0] {
            let mut prob = random_problem(&mut rng, p);
            let star = vec![0.7, 1.8, 1.2, 1.5, 0.6];
            prob.z_d = reduced_objective(&star, &prob).unwrap().hammerstein.z;
            prob.options.max_iter = 200;
            let res = optimize(&prob).unwrap();
            assert!(res.value <= 1e-6, "p={p}: {}", res.value);
            assert!(res.value <= res.iterates[0]);
        }
    }

    #[test]
    fn brute_force_counts_and_limits() {
        let mut prob = one_node(2.0, 0.1);
        let res = brute_force_small(&prob, 2).unwrap();
        assert_eq!(res.evaluations, 4 + 1);
        assert!(brute_force_small(&prob, 65).is_err());
        prob.segments = None;
        assert!(matches!(brute_force_small(&prob, 4), Err(LabError::Unsupported(_))));
    }

    #[test]
    fn brute_force_with_constant_objective_returns_first_point() {
        let g = GridSpec::unit(3).unwrap();
        let d = GridDomain::full_interior(g);
        // f = 0 gives y = 0 for every control, so z and the cost do not move
        let mut prob = OcpProblem::new(d, ClassParams::new(2.0, 0.5, 2.0).unwrap(), vec![0.0; 9], vec![1.0; 9], vec![0.0; 9], KernelSpec::scaled_identity(1.0)).unwrap();
        prob.segments = Some([1, 1]);
        let res = brute_force_small(&prob, 5).unwrap();
        assert_eq!(res.params, vec![0.5, 0.5]);
        assert_eq!(res.value, reduced_objective(&[1.0, 1.0], &prob).unwrap().value);
        let fd = fd_gradient(&[1.0, 1.0], &prob, 1e-5).unwrap();
        assert!(max_abs(&fd.grad) <= 1e-8);
    }

    #[test]
    fn optimize_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prob = random_problem(&mut rng, 3.0);
        let a = optimize(&prob).unwrap();
        let b = optimize(&prob).unwrap();
        assert_eq!(a, b);
    }
}
