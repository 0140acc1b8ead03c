//! Command dispatch: runs one pipeline from a parsed config and writes its
//! outputs, a manifest and, on failure, `error.json`.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::config::{parse_config, ConfigError, ProblemConfig, TransferControl, Violation};
use crate::control::{check_class, ControlField};
use crate::error::LabError;
use crate::geometry::{ekeland_distance, family_generate, hc_distance, kuratowski_check, rasterize, GridDomain};
use crate::grid::GridSpec;
use crate::hammerstein::{monotonicity_probe, solve_hammerstein, HammersteinSolution};
use crate::optimizer::{brute_force_small, optimize, OcpProblem, OcpResult};
use crate::par;
use crate::report::{heatmap, line_plot, nodal_table, num, opt_num, sha256_hex, unix_now, OutputDir, RunManifest, Series, Table};
use crate::stability::{mosco_m1_probe, run_study_on, state_transfer_check, FixedData, StudySpec};
use crate::state::{apriori_check, solve_state, EllipticProblem, StateField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveState,
    SolveHammerstein,
    Optimize,
    PerturbStudy,
    DomainDistance,
    VerifyClass,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveState => "solve-state",
            Command::SolveHammerstein => "solve-hammerstein",
            Command::Optimize => "optimize",
            Command::PerturbStudy => "perturb-study",
            Command::DomainDistance => "domain-distance",
            Command::VerifyClass => "verify-class",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A failed run: the module the error came from and the error itself.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Module { module: &'static str, error: LabError },
}

impl RunError {
    /// Numerical failures and I/O errors while writing results exit with 1,
    /// everything caused by the input exits with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_USAGE,
            RunError::Module { error, .. } if error.is_numerical() || matches!(error, LabError::Io(_)) => EXIT_NUMERICAL,
            RunError::Module { .. } => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config: {e}"),
            RunError::Module { module, error } => write!(f, "{module}: {error}"),
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    command: &'a str,
    kind: &'static str,
    module: &'a str,
    message: String,
    exit_code: i32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

type Stage<T> = std::result::Result<T, RunError>;

fn at<T>(module: &'static str, r: crate::Result<T>) -> Stage<T> {
    r.map_err(|error| RunError::Module { module, error })
}

fn io<T>(r: crate::Result<T>) -> Stage<T> {
    at("cli_config", r)
}

struct Ctx {
    out: OutputDir,
    timings: Vec<(String, f64)>,
}

impl Ctx {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        self.timings.push((stage.into(), t.elapsed().as_secs_f64() * 1e3));
        v
    }
}

/// Parses the config, runs the command and writes every output. Returns the
/// manifest on success; on failure `error.json` is written when possible.
pub fn run(args: &RunArgs) -> std::result::Result<RunManifest, RunError> {
    let started = unix_now();
    let result = (|| {
        let raw = std::fs::read(&args.config).map_err(|e| {
            RunError::Config(ConfigError::Missing {
                path: args.config.display().to_string(),
                message: e.to_string(),
            })
        })?;
        let mut cfg = parse_config(&args.config).map_err(RunError::Config)?;
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        let mut ctx = Ctx {
            out: io(OutputDir::create(&args.out))?,
            timings: Vec::new(),
        };
        io(ctx.out.bytes("config.json", &raw))?;
        dispatch(args.command, &cfg, &mut ctx)?;
        io(ctx.out.timings(&ctx.timings))?;
        let manifest = RunManifest {
            artifact: "ocplab",
            version: env!("CARGO_PKG_VERSION"),
            command: args.command.name().into(),
            config_sha256: sha256_hex(&raw),
            seed: cfg.seed,
            threads: par::current_threads(),
            parallel: cfg!(feature = "parallel"),
            started_unix: started,
            finished_unix: unix_now(),
            files: ctx.out.files().to_vec(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Module {
            module: "cli_config",
            error: LabError::Io(e.to_string()),
        })?;
        io(std::fs::write(ctx.out.root().join("manifest.json"), text + "\n").map_err(LabError::from))?;
        Ok(manifest)
    })();
    if let Err(e) = &result {
        write_error(args, e);
    }
    result
}

fn write_error(args: &RunArgs, e: &RunError) {
    let (kind, module, violations) = match e {
        RunError::Config(c) => (c.kind(), "cli_config", if let ConfigError::Schema(v) = c { v.clone() } else { Vec::new() }),
        RunError::Module { module, error } => (if error.is_numerical() { "numerical" } else { "input" }, *module, Vec::new()),
    };
    let report = ErrorReport {
        command: args.command.name(),
        kind,
        module,
        message: e.to_string(),
        exit_code: e.exit_code(),
        violations,
    };
    if std::fs::create_dir_all(&args.out).is_ok() {
        if let Ok(s) = serde_json::to_string_pretty(&report) {
            let _ = std::fs::write(args.out.join("error.json"), s + "\n");
        }
    }
}

fn dispatch(cmd: Command, cfg: &ProblemConfig, ctx: &mut Ctx) -> Stage<()> {
    let grid = at("domain_geometry", cfg.grid_spec())?;
    match cmd {
        Command::SolveState => {
            let domain = at("domain_geometry", cfg.domain(&grid))?;
            let (prob, y) = state_pipeline(cfg, &grid, &domain, ctx)?;
            write_state(ctx, &y)?;
            let apriori = apriori_check(&y, &prob.f, &prob.params);
            io(ctx.out.json(
                "state.json",
                &serde_json::json!({ "stats": y.stats, "wp_norm": y.wp_norm(prob.params.p), "apriori": apriori }),
            ))?;
            io(ctx.out.pgm("domain.pgm", &domain))
        }
        Command::SolveHammerstein => {
            let domain = at("domain_geometry", cfg.domain(&grid))?;
            let (_, y) = state_pipeline(cfg, &grid, &domain, ctx)?;
            let g = io(cfg.sample(&cfg.g, &grid))?;
            let p = cfg.class.p;
            let sol = ctx.timed("hammerstein", || solve_hammerstein(&y, &g, &cfg.kernel, p, &cfg.hammerstein));
            let sol = at("hammerstein", sol)?;
            let probe = at("hammerstein", monotonicity_probe(&domain, &y.values, cfg.verify.monotone_pairs, p, cfg.seed))?;
            write_state(ctx, &y)?;
            write_z(ctx, &grid, &sol)?;
            io(ctx.out.json(
                "hammerstein.json",
                &serde_json::json!({ "state_stats": y.stats, "solution": sol, "monotonicity": probe }),
            ))?;
            io(ctx.out.pgm("domain.pgm", &domain))
        }
        Command::Optimize => {
            let domain = at("domain_geometry", cfg.domain(&grid))?;
            let prob = ocp_problem(cfg, &grid, domain)?;
            let res = ctx.timed("optimize", || optimize(&prob));
            let res = at("optimizer", res)?;
            write_ocp(ctx, &grid, &res, "")?;
            if let Some(r) = cfg.optimizer.brute_force {
                let bf = ctx.timed("brute_force", || brute_force_small(&prob, r));
                let bf = at("optimizer", bf)?;
                io(ctx.out.json(
                    "brute_force.json",
                    &serde_json::json!({
                        "resolution": r,
                        "value": bf.value,
                        "params": bf.params,
                        "evaluations": bf.evaluations,
                        "value_difference": res.value - bf.value,
                    }),
                ))?;
            }
            io(ctx.out.pgm("domain.pgm", &prob.domain))
        }
        Command::PerturbStudy => perturb_study(cfg, &grid, ctx),
        Command::DomainDistance => {
            let a = at("domain_geometry", cfg.domain(&grid))?;
            let Some(shape) = &cfg.compare_domain else {
                return Err(RunError::Config(ConfigError::Schema(vec![Violation {
                    field: "compare_domain".into(),
                    message: "required by domain-distance".into(),
                }])));
            };
            let b = at("domain_geometry", rasterize(shape, &grid))?;
            let hc = at("domain_geometry", hc_distance(&a, &b))?;
            let ek = at("domain_geometry", ekeland_distance(&a, &b))?;
            io(ctx.out.json(
                "distance.json",
                &serde_json::json!({
                    "hc_distance": hc,
                    "ekeland_distance": ek,
                    "h": grid.h,
                    "nodes_a": a.node_count(),
                    "nodes_b": b.node_count(),
                    "measure_a": a.measure(),
                    "measure_b": b.measure(),
                }),
            ))?;
            io(ctx.out.pgm("domain_a.pgm", &a))?;
            io(ctx.out.pgm("domain_b.pgm", &b))
        }
        Command::VerifyClass => {
            let params = cfg.class.params();
            at("control_fields", params.validate(Some(&grid)))?;
            let u = at("control_fields", cfg.control.build(&grid, &params, &cfg.base_dir))?;
            let report = at("control_fields", check_class(&u, &params, cfg.verify.samples, cfg.seed))?;
            io(ctx.out.json(
                "class_report.json",
                &serde_json::json!({ "report": report, "all_ok": report.all_ok() }),
            ))?;
            io(ctx.out.json("control.json", &u.to_json(&params)))?;
            io(ctx.out.bytes("control.bin", &u.to_binary()))
        }
    }
}

fn state_pipeline(cfg: &ProblemConfig, grid: &GridSpec, domain: &GridDomain, ctx: &mut Ctx) -> Stage<(EllipticProblem, StateField)> {
    let params = cfg.class.params();
    let u = at("control_fields", cfg.control.build(grid, &params, &cfg.base_dir))?;
    let f = io(cfg.sample(&cfg.f, grid))?;
    let prob = at("state_solver", EllipticProblem::new(u, f, domain.clone(), params))?.with_options(cfg.solver.clone());
    let y = ctx.timed("state", || solve_state(&prob));
    let y = at("state_solver", y)?;
    Ok((prob, y))
}

fn ocp_problem(cfg: &ProblemConfig, grid: &GridSpec, domain: GridDomain) -> Stage<OcpProblem> {
    let params = cfg.class.params();
    let f = io(cfg.sample(&cfg.f, grid))?;
    let g = io(cfg.sample(&cfg.g, grid))?;
    let z_d = io(cfg.sample(&cfg.z_d, grid))?;
    let mut prob = at("optimizer", OcpProblem::new(domain, params, f, g, z_d, cfg.kernel.clone()))?;
    let o = &cfg.optimizer;
    prob.options = o.options.clone();
    prob.segments = o.segments;
    prob.initial = o.initial.clone();
    if let Some([q1, q2]) = &o.divergence_target {
        prob.divergence_target = Some([io(cfg.sample(q1, grid))?, io(cfg.sample(q2, grid))?]);
    }
    at("optimizer", prob.validate())?;
    Ok(prob)
}

fn write_state(ctx: &mut Ctx, y: &StateField) -> Stage<()> {
    let grid = *y.grid();
    io(ctx.out.csv("state.csv", &nodal_table(&grid, &y.values)))?;
    io(ctx.out.f64s("state.bin", &y.values))?;
    io(ctx.out.text("state.svg", &heatmap("state y", &grid, &y.values)))
}

fn write_z(ctx: &mut Ctx, grid: &GridSpec, sol: &HammersteinSolution) -> Stage<()> {
    io(ctx.out.csv("z.csv", &nodal_table(grid, &sol.z)))?;
    io(ctx.out.f64s("z.bin", &sol.z))?;
    io(ctx.out.text("z.svg", &heatmap("Hammerstein solution z", grid, &sol.z)))
}

fn write_ocp(ctx: &mut Ctx, grid: &GridSpec, res: &OcpResult, prefix: &str) -> Stage<()> {
    let params = &res.control;
    io(ctx.out.json(
        &format!("{prefix}result.json"),
        &serde_json::json!({
            "value": res.value,
            "kkt_residual": res.kkt_residual,
            "stop": res.stop,
            "evaluations": res.evaluations,
            "iterations": res.iterates.len().saturating_sub(1),
            "iterates": res.iterates,
            "params": res.params,
            "state_stats": res.state.stats,
            "hammerstein": res.hammerstein,
        }),
    ))?;
    let mut t = Table::new(&["iteration", "value"]);
    for (i, v) in res.iterates.iter().enumerate() {
        t.row(vec![i.to_string(), num(*v)]);
    }
    io(ctx.out.csv(&format!("{prefix}iterates.csv"), &t))?;
    io(ctx.out.bytes(&format!("{prefix}control.bin"), &params.to_binary()))?;
    io(ctx.out.f64s(&format!("{prefix}state.bin"), &res.state.values))?;
    io(ctx.out.f64s(&format!("{prefix}z.bin"), &res.hammerstein.z))?;
    if prefix.is_empty() {
        io(ctx.out.csv("state.csv", &nodal_table(grid, &res.state.values)))?;
        io(ctx.out.csv("z.csv", &nodal_table(grid, &res.hammerstein.z)))?;
        io(ctx.out.text("z.svg", &heatmap("Hammerstein solution z", grid, &res.hammerstein.z)))?;
        let it: Vec<f64> = (0..res.iterates.len()).map(|i| i as f64).collect();
        io(ctx.out.text(
            "iterates.svg",
            &line_plot("cost per iteration", "iteration", &[Series { name: "I(U_k)", x: &it, y: &res.iterates }], false),
        ))?;
    }
    Ok(())
}

fn perturb_study(cfg: &ProblemConfig, grid: &GridSpec, ctx: &mut Ctx) -> Stage<()> {
    let Some(fspec) = &cfg.family else {
        return Err(RunError::Config(ConfigError::Schema(vec![Violation {
            field: "family".into(),
            message: "required by perturb-study".into(),
        }])));
    };
    let family = ctx.timed("family", || family_generate(fspec, grid));
    let family = at("domain_geometry", family)?;
    let mut template = ocp_problem(cfg, grid, family.limit.clone())?;
    if cfg.study.support_condition {
        // data live on the limit domain
        template.g = family.limit.restrict(&template.g);
        template.z_d = family.limit.restrict(&template.z_d);
    }
    let st = &cfg.study;
    let spec = StudySpec {
        family: fspec.clone(),
        problem: template.clone(),
        support_condition: st.support_condition,
        warm_start: st.warm_start,
        threshold: st.threshold,
        slack: st.slack,
    };
    let study = ctx.timed("study", || run_study_on(&family, &spec));
    let study = at("stability_lab", study)?;
    ctx.timings.push(("limit".into(), study.limit_runtime_ms));
    for r in &study.records {
        ctx.timings.push((format!("eps={}", r.eps), r.runtime_ms));
    }

    let mut t = Table::new(&[
        "eps",
        "value",
        "value_gap",
        "relative_gap",
        "hc_distance",
        "ekeland_distance",
        "state_gap",
        "z_gap",
        "iterations",
        "cold_value",
    ]);
    for r in &study.records {
        t.row(vec![
            num(r.eps),
            num(r.value),
            num(r.value_gap),
            num(r.relative_gap),
            num(r.hc_distance),
            num(r.ekeland_distance),
            num(r.state_gap),
            num(r.z_gap),
            r.iterations.to_string(),
            opt_num(r.cold_value),
        ]);
    }
    io(ctx.out.csv("study.csv", &t))?;

    let kura = at("domain_geometry", kuratowski_check(&family.members, &family.limit, 2.0 * grid.h))?;
    let u: ControlField = match st.transfer_control {
        TransferControl::Identity => ControlField::identity(*grid),
        TransferControl::Optimal => study.limit.control.clone(),
    };
    let data = FixedData {
        params: &template.params,
        f: &template.f,
        g: &template.g,
        kernel: &template.kernel,
        state_options: cfg.solver.clone(),
        hammerstein_options: cfg.hammerstein.clone(),
    };
    let transfer = ctx.timed("transfer", || state_transfer_check(&u, &family, &data, st.transfer_threshold, st.slack));
    let transfer = at("stability_lab", transfer)?;
    let mut tt = Table::new(&["eps", "state_gap", "z_gap", "norm_gap"]);
    for r in &transfer.records {
        tt.row(vec![num(r.eps), num(r.state_gap), num(r.z_gap), num(r.norm_gap)]);
    }
    io(ctx.out.csv("transfer.csv", &tt))?;

    let y_limit = at(
        "state_solver",
        EllipticProblem::new(u.clone(), template.f.clone(), family.limit.clone(), template.params.clone())
            .map(|p| p.with_options(cfg.solver.clone()))
            .and_then(|p| solve_state(&p)),
    )?;
    let mosco = ctx.timed("mosco", || mosco_m1_probe(&y_limit.values, &family, Some(&fspec.kind), &data, st.slack));
    let mosco = at("stability_lab", mosco)?;

    io(ctx.out.json(
        "study.json",
        &serde_json::json!({
            "study": study,
            "limit": {
                "value": study.limit.value,
                "params": study.limit.params,
                "kkt_residual": study.limit.kkt_residual,
            },
            "kuratowski": kura,
            "transfer_control": st.transfer_control,
            "transfer": transfer,
            "mosco_m1": mosco,
        }),
    ))?;
    write_ocp(ctx, grid, &study.limit, "limit_")?;
    io(ctx.out.pgm("limit.pgm", &family.limit))?;
    for (k, m) in family.members.iter().enumerate() {
        io(ctx.out.pgm(&format!("member_{k}.pgm"), m))?;
    }

    let eps: Vec<f64> = study.records.iter().map(|r| r.eps).collect();
    let col = |f: fn(&crate::stability::StudyRecord) -> f64| study.records.iter().map(f).collect::<Vec<f64>>();
    let (vg, sg, hc) = (col(|r| r.value_gap), col(|r| r.state_gap), col(|r| r.hc_distance));
    let teps: Vec<f64> = transfer.records.iter().map(|r| r.eps).collect();
    let tsg: Vec<f64> = transfer.records.iter().map(|r| r.state_gap).collect();
    for (name, title, series) in [
        ("value_gap.svg", "|I_eps - I_0|", vec![Series { name: "value gap", x: &eps, y: &vg }]),
        (
            "state_gap.svg",
            "state gap",
            vec![Series { name: "optimal states", x: &eps, y: &sg }, Series { name: "fixed control", x: &teps, y: &tsg }],
        ),
        ("hc_distance.svg", "Hausdorff complementary distance", vec![Series { name: "hc", x: &eps, y: &hc }]),
    ] {
        io(ctx.out.text(name, &line_plot(title, "eps", &series, true)))?;
    }
    Ok(())
}

/// Number of worker threads from the flag, then `LAB_THREADS`.
pub fn thread_request(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("LAB_THREADS") {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| format!("LAB_THREADS must be a positive integer, got {s:?}")),
        _ => Ok(None),
    }
}
