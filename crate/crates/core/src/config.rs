//! JSON problem configuration: parsing, defaults, range checks and the data
//! expression table.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, DeserializeSeed, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::control::{CellBound, ClassParams, ControlField};
use crate::geometry::{rasterize, FamilySpec, GridDomain, Shape};
use crate::grid::GridSpec;
use crate::hammerstein::{HammersteinOptions, KernelSpec};
use crate::optimizer::OptimizerOptions;
use crate::state::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Missing { path: String, message: String },
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("{} schema violation(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Schema(Vec<Violation>),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Missing { .. } => "missing_file",
            ConfigError::Malformed(_) => "malformed_json",
            ConfigError::Schema(_) => "schema",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per axis on the unit square; overrides `nx`/`ny`.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub nx: Option<usize>,
    #[serde(default)]
    pub ny: Option<usize>,
    #[serde(default = "unit_box")]
    pub bbox: [f64; 4],
}

fn unit_box() -> [f64; 4] {
    [0.0, 1.0, 0.0, 1.0]
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: Some(33),
            nx: None,
            ny: None,
            bbox: unit_box(),
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> crate::Result<GridSpec> {
        let (nx, ny) = match (self.n, self.nx, self.ny) {
            (Some(n), _, _) => (n, n),
            (None, Some(nx), Some(ny)) => (nx, ny),
            _ => return Err(crate::LabError::InvalidGrid("give either n or both nx and ny".into())),
        };
        GridSpec::new(nx, ny, self.bbox)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub xi1: Option<CellBound>,
    #[serde(default)]
    pub xi2: Option<CellBound>,
}

impl Default for ClassConfig {
    fn default() -> Self {
        ClassConfig {
            p: 2.0,
            alpha: 0.5,
            beta: 2.0,
            xi1: None,
            xi2: None,
        }
    }
}

impl ClassConfig {
    pub fn params(&self) -> ClassParams {
        ClassParams {
            p: self.p,
            alpha: self.alpha,
            beta: self.beta,
            xi1: self.xi1.clone().unwrap_or(CellBound::Const(0.0)),
            xi2: self.xi2.clone().unwrap_or(CellBound::Const(self.beta)),
        }
    }
}

/// Nodal data given by a small expression table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expr {
    Number(f64),
    Term(Term),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    Const { value: f64 },
    /// `amp * sin(kx π x) * sin(ky π y)`
    SinProduct {
        #[serde(default = "one")]
        amp: f64,
        kx: f64,
        ky: f64,
    },
    /// `Σ c x^i y^j` over `[c, i, j]` triples.
    Polynomial { terms: Vec<(f64, u32, u32)> },
    /// `amp * exp(-|x - center|² / (2 width²))`
    Gaussian {
        #[serde(default = "one")]
        amp: f64,
        center: [f64; 2],
        width: f64,
    },
    Sum { terms: Vec<Expr> },
    /// Node values from a CSV with an `x,y,value` header, in node order.
    /// Relative paths are resolved against the config file.
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Number(v)
    }

    fn eval_at(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Number(v) => *v,
            Expr::Term(t) => match t {
                Term::Const { value } => *value,
                Term::SinProduct { amp, kx, ky } => {
                    amp * (kx * std::f64::consts::PI * x).sin() * (ky * std::f64::consts::PI * y).sin()
                }
                Term::Polynomial { terms } => terms.iter().map(|&(c, i, j)| c * x.powi(i as i32) * y.powi(j as i32)).sum(),
                Term::Gaussian { amp, center, width } => {
                    let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                    amp * (-r2 / (2.0 * width * width)).exp()
                }
                Term::Sum { terms } => terms.iter().map(|e| e.eval_at(x, y)).sum(),
                Term::File { .. } => unreachable!("files are loaded before evaluation"),
            },
        }
    }

    fn has_file(&self) -> bool {
        match self {
            Expr::Term(Term::File { .. }) => true,
            Expr::Term(Term::Sum { terms }) => terms.iter().any(Expr::has_file),
            _ => false,
        }
    }

    /// Samples the expression at every node.
    pub fn sample(&self, grid: &GridSpec, base: &Path) -> crate::Result<Vec<f64>> {
        match self {
            Expr::Term(Term::File { path }) => read_values(&base.join(path), grid),
            Expr::Term(Term::Sum { terms }) if self.has_file() => {
                let mut out = vec![0.0; grid.n_nodes()];
                for t in terms {
                    for (o, v) in out.iter_mut().zip(t.sample(grid, base)?) {
                        *o += v;
                    }
                }
                Ok(out)
            }
            _ => Ok(grid.sample(|x, y| self.eval_at(x, y))),
        }
    }

    fn check(&self, field: &str, out: &mut Vec<Violation>) {
        let mut bad = |m: String| out.push(Violation { field: field.into(), message: m });
        match self {
            Expr::Number(v) | Expr::Term(Term::Const { value: v }) if !v.is_finite() => bad(format!("non-finite constant {v}")),
            Expr::Term(Term::Gaussian { width, .. }) if !(*width > 0.0) => bad(format!("gaussian width must be > 0, got {width}")),
            Expr::Term(Term::Polynomial { terms }) if terms.iter().any(|t| t.1 > 16 || t.2 > 16) => {
                bad("polynomial degree must be at most 16".into())
            }
            Expr::Term(Term::Sum { terms }) => {
                for (i, t) in terms.iter().enumerate() {
                    t.check(&format!("{field}.terms[{i}]"), out);
                }
            }
            _ => {}
        }
    }
}

fn read_values(path: &Path, grid: &GridSpec) -> crate::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::LabError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != "x,y,value" {
        return Err(crate::LabError::InvalidParams(format!("{}: expected header x,y,value", path.display())));
    }
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.rsplit(',')
                .next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| crate::LabError::InvalidParams(format!("{}: bad line {l:?}", path.display())))
        })
        .collect::<crate::Result<Vec<f64>>>()?;
    grid.check_len(values.len(), "file data")?;
    Ok(values)
}

/// A profile given as one constant or one value per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Const(f64),
    Values(Vec<f64>),
}

impl Profile {
    pub fn expand(&self, n: usize) -> crate::Result<Vec<f64>> {
        match self {
            Profile::Const(v) => Ok(vec![*v; n]),
            Profile::Values(v) if v.len() == n => Ok(v.clone()),
            Profile::Values(v) => Err(crate::LabError::GridMismatch(format!("profile has {} entries, expected {n}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    #[default]
    Identity,
    /// The same `[a11, a12, a21, a22]` on every cell.
    Constant { entries: [f64; 4] },
    /// `diag(profile1(x₂), profile2(x₁))`
    Profiles { profile1: Profile, profile2: Profile },
    /// Little-endian `f64` entries `a11, a12, a21, a22` per cell.
    File { path: PathBuf },
}

impl ControlConfig {
    pub fn build(&self, grid: &GridSpec, params: &ClassParams, base: &Path) -> crate::Result<ControlField> {
        match self {
            ControlConfig::Identity => Ok(ControlField::identity(*grid)),
            ControlConfig::Constant { entries } => ControlField::from_entries(*grid, vec![*entries; grid.n_cells()]),
            ControlConfig::Profiles { profile1, profile2 } => {
                crate::control::make_diagonal_control(&profile1.expand(grid.cy())?, &profile2.expand(grid.cx())?, grid, params)
            }
            ControlConfig::File { path } => {
                let p = base.join(path);
                let bytes = std::fs::read(&p).map_err(|e| crate::LabError::Io(format!("{}: {e}", p.display())))?;
                ControlField::from_binary(*grid, &bytes)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub options: OptimizerOptions,
    pub segments: Option<[usize; 2]>,
    pub initial: Option<Vec<f64>>,
    /// Nodal divergence targets for the two control rows.
    pub divergence_target: Option<[Expr; 2]>,
    /// Also run the exhaustive grid search with this many points per axis.
    pub brute_force: Option<usize>,
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransferControl {
    #[default]
    Identity,
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub support_condition: bool,
    pub warm_start: bool,
    pub threshold: f64,
    pub slack: f64,
    pub transfer_threshold: f64,
    pub transfer_control: TransferControl,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            support_condition: true,
            warm_start: true,
            threshold: 1e-2,
            slack: 0.05,
            transfer_threshold: 5e-2,
            transfer_control: TransferControl::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub samples: usize,
    /// Random pairs for the Hammerstein monotonicity probe.
    pub monotone_pairs: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 1000,
            monotone_pairs: 100,
        }
    }
}

fn default_kernel() -> KernelSpec {
    KernelSpec::gaussian(0.1, 1.0, 0.1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConfig {
    pub grid: GridConfig,
    pub domain: Option<Shape>,
    pub compare_domain: Option<Shape>,
    pub family: Option<FamilySpec>,
    pub class: ClassConfig,
    pub f: Expr,
    pub g: Expr,
    pub z_d: Expr,
    pub kernel: KernelSpec,
    pub control: ControlConfig,
    pub solver: SolverOptions,
    pub hammerstein: HammersteinOptions,
    pub optimizer: OptimizerConfig,
    pub study: StudyConfig,
    pub verify: VerifyConfig,
    pub seed: u64,
    /// Directory of the config file, for relative data paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            grid: GridConfig::default(),
            domain: None,
            compare_domain: None,
            family: None,
            class: ClassConfig::default(),
            f: Expr::constant(1.0),
            g: Expr::constant(0.0),
            z_d: Expr::constant(0.0),
            kernel: default_kernel(),
            control: ControlConfig::default(),
            solver: SolverOptions::default(),
            hammerstein: HammersteinOptions::default(),
            optimizer: OptimizerConfig::default(),
            study: StudyConfig::default(),
            verify: VerifyConfig::default(),
            seed: 0,
            base_dir: PathBuf::from("."),
        }
    }
}

const KEYS: [&str; 16] = [
    "grid", "domain", "compare_domain", "family", "class", "f", "g", "z_d", "kernel", "control", "solver", "hammerstein", "optimizer", "study", "verify", "seed",
];

/// Rejects objects that repeat a key, anywhere in the document.
struct NoDuplicates;

impl<'de> DeserializeSeed<'de> for NoDuplicates {
    type Value = ();
    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<(), D::Error> {
        d.deserialize_any(NoDuplicates)
    }
}

impl<'de> Visitor<'de> for NoDuplicates {
    type Value = ();
    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("any JSON value")
    }
    fn visit_bool<E>(self, _: bool) -> Result<(), E> {
        Ok(())
    }
    fn visit_i64<E>(self, _: i64) -> Result<(), E> {
        Ok(())
    }
    fn visit_u64<E>(self, _: u64) -> Result<(), E> {
        Ok(())
    }
    fn visit_f64<E>(self, _: f64) -> Result<(), E> {
        Ok(())
    }
    fn visit_str<E>(self, _: &str) -> Result<(), E> {
        Ok(())
    }
    fn visit_unit<E>(self) -> Result<(), E> {
        Ok(())
    }
    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<(), A::Error> {
        while seq.next_element_seed(NoDuplicates)?.is_some() {}
        Ok(())
    }
    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<(), A::Error> {
        let mut seen = HashSet::new();
        while let Some(key) = map.next_key::<String>()? {
            if !seen.insert(key.clone()) {
                return Err(de::Error::custom(format!("duplicate key {key:?}")));
            }
            map.next_value_seed(NoDuplicates)?;
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<ProblemConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Missing {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut cfg = parse_config_str(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

fn section<T: serde::de::DeserializeOwned>(obj: &serde_json::Map<String, Value>, key: &str, out: &mut Vec<Violation>) -> Option<T> {
    let v = obj.get(key)?;
    match serde_json::from_value::<T>(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            out.push(Violation {
                field: key.into(),
                message: e.to_string(),
            });
            None
        }
    }
}

/// Parses and validates a config. Every section is decoded independently so
/// that all violations are reported together.
pub fn parse_config_str(text: &str) -> Result<ProblemConfig, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    NoDuplicates.deserialize(&mut de).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    de.end().map_err(|e| ConfigError::Malformed(e.to_string()))?;
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ConfigError::Schema(vec![Violation {
            field: "$".into(),
            message: "top level must be an object".into(),
        }]));
    };
    let mut out = Vec::new();
    for k in obj.keys() {
        if !KEYS.contains(&k.as_str()) {
            out.push(Violation {
                field: k.clone(),
                message: format!("unknown key (expected one of {})", KEYS.join(", ")),
            });
        }
    }
    let mut cfg = ProblemConfig::default();
    macro_rules! take {
        ($field:ident, $key:literal) => {
            if let Some(v) = section(&obj, $key, &mut out) {
                cfg.$field = v;
            }
        };
        (opt $field:ident, $key:literal) => {
            if let Some(v) = section(&obj, $key, &mut out) {
                cfg.$field = Some(v);
            }
        };
    }
    take!(grid, "grid");
    take!(opt domain, "domain");
    take!(opt compare_domain, "compare_domain");
    take!(opt family, "family");
    take!(class, "class");
    take!(f, "f");
    take!(g, "g");
    take!(z_d, "z_d");
    take!(kernel, "kernel");
    take!(control, "control");
    take!(solver, "solver");
    take!(hammerstein, "hammerstein");
    take!(optimizer, "optimizer");
    take!(study, "study");
    take!(verify, "verify");
    take!(seed, "seed");
    cfg.check_ranges(&mut out);
    if out.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Schema(out))
    }
}

impl ProblemConfig {
    fn check_ranges(&self, out: &mut Vec<Violation>) {
        let mut bad = |field: &str, message: String| {
            out.push(Violation {
                field: field.into(),
                message,
            })
        };
        if let Some(n) = self.grid.n {
            if !(3..=1025).contains(&n) {
                bad("grid.n", format!("must lie in [3, 1025], got {n}"));
            }
        }
        if let Err(e) = self.grid.spec() {
            bad("grid", e.to_string());
        }
        let c = &self.class;
        if !(2.0..=4.0).contains(&c.p) {
            bad("class.p", format!("must lie in [2, 4], got {}", c.p));
        }
        if !(c.alpha > 0.0) {
            bad("class.alpha", format!("must be > 0, got {}", c.alpha));
        }
        if !(c.beta >= c.alpha) {
            bad("class.beta", format!("must be >= alpha = {}, got {}", c.alpha, c.beta));
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            bad("solver.tol", format!("must be > 0, got {}", s.tol));
        }
        if s.max_iter == 0 {
            bad("solver.max_iter", "must be >= 1".into());
        }
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            bad("solver.damping", format!("must lie in (0, 1], got {}", s.damping));
        }
        let hm = &self.hammerstein;
        if !(hm.tol > 0.0) {
            bad("hammerstein.tol", format!("must be > 0, got {}", hm.tol));
        }
        if !(hm.inner_tol > 0.0 && hm.inner_tol < 1.0) {
            bad("hammerstein.inner_tol", format!("must lie in (0, 1), got {}", hm.inner_tol));
        }
        if let Err(e) = self.kernel.validate() {
            bad("kernel", e.to_string());
        }
        let o = &self.optimizer.options;
        if !(o.tol > 0.0) {
            bad("optimizer.tol", format!("must be > 0, got {}", o.tol));
        }
        if !(o.fd_step > 0.0) {
            bad("optimizer.fd_step", format!("must be > 0, got {}", o.fd_step));
        }
        if !(o.armijo > 0.0 && o.armijo < 1.0) {
            bad("optimizer.armijo", format!("must lie in (0, 1), got {}", o.armijo));
        }
        if let Some(r) = self.optimizer.brute_force {
            if !(1..=64).contains(&r) {
                bad("optimizer.brute_force", format!("must lie in [1, 64], got {r}"));
            }
        }
        let st = &self.study;
        if !(st.threshold > 0.0) {
            bad("study.threshold", format!("must be > 0, got {}", st.threshold));
        }
        if !(st.transfer_threshold > 0.0) {
            bad("study.transfer_threshold", format!("must be > 0, got {}", st.transfer_threshold));
        }
        if !(st.slack >= 0.0) {
            bad("study.slack", format!("must be >= 0, got {}", st.slack));
        }
        if self.verify.samples == 0 {
            bad("verify.samples", "must be >= 1".into());
        }
        if let Some(fam) = &self.family {
            if let Some(e) = fam.eps_list.iter().find(|e| !(**e > 0.0)) {
                bad("family.eps_list", format!("entries must be > 0, got {e}"));
            }
        }
        for (e, name) in [(&self.f, "f"), (&self.g, "g"), (&self.z_d, "z_d")] {
            e.check(name, out);
        }
    }

    pub fn grid_spec(&self) -> crate::Result<GridSpec> {
        self.grid.spec()
    }

    /// The configured domain, or every interior node of the box.
    pub fn domain(&self, grid: &GridSpec) -> crate::Result<GridDomain> {
        match &self.domain {
            Some(s) => rasterize(s, grid),
            None => Ok(GridDomain::full_interior(*grid)),
        }
    }

    pub fn sample(&self, e: &Expr, grid: &GridSpec) -> crate::Result<Vec<f64>> {
        e.sample(grid, &self.base_dir)
    }
}
