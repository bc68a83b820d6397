//! Batch front door: JSON run configs, binary field files, CSV reports and
//! run manifests.
//!
//! Field file layout (little-endian):
//!
//! ```text
//! 0..4   magic "M4NL"
//! 4..8   u32 version = 1
//! 8      u8 dim
//! 9      u8 dtype (0 real f64, 1 complex f64 interleaved)
//! 10..12 u16 reserved = 0
//! 12..16 u32 n per dimension
//! 16..24 f64 box length
//! 24..   n^dim values (x2 when complex), row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    critical_mass_search, fit_decay_rate, gamma_limit_study, shoot_1d, sign_report, CriticalMassOptions, GammaLimitOptions,
    ShootOptions,
};
use crate::error::{Error, Result};
use crate::evolution::{split_step_evolve, stability_experiment, ExperimentOptions, Perturbation};
use crate::functionals::identity_report;
use crate::linearization::{
    smallest_eigenpairs_with, stability_condition, EigenOptions, Linearization, MAX_EIGENPAIRS,
};
use crate::solvers::{
    default_initial_guess, normalized_gradient_flow, petviashvili_solve, FlowOptions, GroundStateResult,
    PetviashviliOptions,
};
use crate::spectral::{make_grid, ComplexField, Field, Grid, Params, Sampled};

pub const MAGIC: &[u8; 4] = b"M4NL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GroundState,
    MassMin,
    Spectrum,
    StabilityCondition,
    Evolve,
    StabilityExperiment,
    DecayFit,
    CriticalMass,
    GammaLimit,
    #[serde(rename = "shoot-1d")]
    Shoot1d,
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Scale,
    Noise,
    Modulated,
}

fn d_dim() -> usize {
    1
}
fn d_n() -> usize {
    256
}
fn d_length() -> f64 {
    64.0
}
fn d_tol() -> f64 {
    1e-10
}
fn d_max_iter() -> usize {
    2000
}
fn d_flow_max_iter() -> usize {
    200_000
}
fn d_epsilon() -> f64 {
    0.0
}
fn d_t_end() -> f64 {
    10.0
}
fn d_window() -> f64 {
    0.5
}
fn d_output() -> String {
    "out".into()
}
fn d_record() -> usize {
    10
}
fn d_k() -> usize {
    4
}
fn d_which() -> Linearization {
    Linearization::L1
}
fn d_perturbation() -> PerturbationKind {
    PerturbationKind::Scale
}
fn d_bisect() -> f64 {
    0.02
}
fn d_x_max() -> f64 {
    30.0
}
fn d_step() -> f64 {
    1e-3
}
fn d_verify_tol() -> f64 {
    1e-6
}
fn d_max_probes() -> usize {
    60
}

/// Validated run configuration. Keys are flat; knobs of the gradient flow
/// use the dotted `flow.` prefix.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub gamma: f64,
    pub beta: f64,
    pub sigma: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(rename = "L", default = "d_length")]
    pub length: f64,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(rename = "flow.max_iter", default = "d_flow_max_iter")]
    pub flow_max_iter: usize,
    #[serde(rename = "flow.residual_tol", default)]
    pub flow_residual_tol: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub gamma_list: Option<Vec<f64>>,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_window")]
    pub window_fraction: f64,
    #[serde(default = "d_output")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
    /// Field file holding the profile; otherwise one is computed.
    #[serde(default)]
    pub input: Option<String>,
    #[serde(default = "d_perturbation")]
    pub perturbation: PerturbationKind,
    #[serde(default = "d_record")]
    pub record_every: usize,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_which")]
    pub which: Linearization,
    #[serde(default)]
    pub kernel_tol: Option<f64>,
    #[serde(default)]
    pub mu_lo: Option<f64>,
    #[serde(default)]
    pub mu_hi: Option<f64>,
    #[serde(default = "d_bisect")]
    pub bisect_tol: f64,
    #[serde(default = "d_max_probes")]
    pub max_probes: usize,
    #[serde(default)]
    pub u0: Option<f64>,
    #[serde(default)]
    pub upp0: Option<f64>,
    #[serde(default = "d_x_max")]
    pub x_max: f64,
    #[serde(default = "d_step")]
    pub step: f64,
    #[serde(default = "d_verify_tol")]
    pub verify_tol: f64,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

fn unit_interval(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(bad(key, format!("must lie in (0, 1), got {v}")))
    }
}

fn need<T: Copy>(key: &str, v: Option<T>, cmd: Command) -> Result<T> {
    v.ok_or_else(|| bad(key, format!("required by {}", cmd.name())))
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GroundState => "ground-state",
            Command::MassMin => "mass-min",
            Command::Spectrum => "spectrum",
            Command::StabilityCondition => "stability-condition",
            Command::Evolve => "evolve",
            Command::StabilityExperiment => "stability-experiment",
            Command::DecayFit => "decay-fit",
            Command::CriticalMass => "critical-mass",
            Command::GammaLimit => "gamma-limit",
            Command::Shoot1d => "shoot-1d",
            Command::Verify => "verify",
        }
    }
}

impl RunConfig {
    /// Range checks; every error names its key.
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(bad("gamma", format!("must be finite and >= 0, got {}", self.gamma)));
        }
        if !self.beta.is_finite() {
            return Err(bad("beta", "must be finite"));
        }
        positive("sigma", self.sigma)?;
        if let Some(a) = self.alpha {
            if !a.is_finite() {
                return Err(bad("alpha", "must be finite"));
            }
        }
        if !(1..=3).contains(&self.dim) {
            return Err(bad("dim", format!("must be 1, 2 or 3, got {}", self.dim)));
        }
        if self.n < 16 || self.n % 2 != 0 {
            return Err(bad("n", format!("must be even and >= 16, got {}", self.n)));
        }
        positive("L", self.length)?;
        unit_interval("tol", self.tol)?;
        if self.max_iter == 0 {
            return Err(bad("max_iter", "must be >= 1"));
        }
        if self.flow_max_iter == 0 {
            return Err(bad("flow.max_iter", "must be >= 1"));
        }
        if let Some(r) = self.flow_residual_tol {
            positive("flow.residual_tol", r)?;
        }
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        if let Some(mu) = self.mu {
            positive("mu", mu)?;
        }
        if let Some(list) = &self.gamma_list {
            if list.is_empty() {
                return Err(bad("gamma_list", "must not be empty"));
            }
            for &g in list {
                positive("gamma_list", g)?;
            }
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(bad("epsilon", format!("must be finite and >= 0, got {}", self.epsilon)));
        }
        positive("t_end", self.t_end)?;
        unit_interval("window_fraction", self.window_fraction)?;
        if self.output_dir.is_empty() {
            return Err(bad("output_dir", "must not be empty"));
        }
        if self.record_every == 0 {
            return Err(bad("record_every", "must be >= 1"));
        }
        if self.k == 0 || self.k > MAX_EIGENPAIRS {
            return Err(bad("k", format!("must lie in 1..={MAX_EIGENPAIRS}, got {}", self.k)));
        }
        if let Some(t) = self.kernel_tol {
            positive("kernel_tol", t)?;
        }
        if let Some(v) = self.mu_lo {
            positive("mu_lo", v)?;
        }
        if let Some(v) = self.mu_hi {
            positive("mu_hi", v)?;
            if let Some(lo) = self.mu_lo {
                if v <= lo {
                    return Err(bad("mu_hi", format!("must exceed mu_lo = {lo}, got {v}")));
                }
            }
        }
        unit_interval("bisect_tol", self.bisect_tol)?;
        if self.max_probes < 2 {
            return Err(bad("max_probes", "must be >= 2"));
        }
        for (key, v) in [("u0", self.u0), ("upp0", self.upp0)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(bad(key, "must be finite"));
                }
            }
        }
        positive("x_max", self.x_max)?;
        positive("step", self.step)?;
        if self.step >= self.x_max {
            return Err(bad("step", format!("must be below x_max = {}", self.x_max)));
        }
        positive("verify_tol", self.verify_tol)?;
        self.validate_command()
    }

    fn validate_command(&self) -> Result<()> {
        let cmd = self.command;
        match cmd {
            Command::GroundState => {
                need("alpha", self.alpha, cmd)?;
            }
            Command::MassMin => {
                need("mu", self.mu, cmd)?;
            }
            Command::Spectrum
            | Command::StabilityCondition
            | Command::Evolve
            | Command::StabilityExperiment
            | Command::DecayFit => {
                need("alpha", self.alpha, cmd)?;
            }
            Command::CriticalMass => {
                need("mu_lo", self.mu_lo, cmd)?;
                need("mu_hi", self.mu_hi, cmd)?;
            }
            Command::GammaLimit => {
                need("mu", self.mu, cmd)?;
                if self.gamma_list.is_none() {
                    return Err(bad("gamma_list", "required by gamma-limit"));
                }
            }
            Command::Shoot1d => {
                need("alpha", self.alpha, cmd)?;
                need("u0", self.u0, cmd)?;
                need("upp0", self.upp0, cmd)?;
                if self.dim != 1 {
                    return Err(bad("dim", "shoot-1d requires dim = 1"));
                }
            }
            Command::Verify => {
                if self.input.is_none() {
                    return Err(bad("input", "required by verify"));
                }
            }
        }
        Ok(())
    }

    /// Params with `alpha` (0 when the command does not prescribe it).
    pub fn params(&self) -> Result<Params> {
        Params::new(self.gamma, self.beta, self.alpha.unwrap_or(0.0), self.sigma, self.dim)
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        make_grid(self.dim, self.n, self.length)
    }

    fn flow(&self) -> FlowOptions {
        FlowOptions {
            dt: self.dt.unwrap_or(0.1),
            max_iter: self.flow_max_iter,
            residual_tol: self.flow_residual_tol,
            ..FlowOptions::default()
        }
    }

    fn perturbation(&self) -> Perturbation {
        match self.perturbation {
            PerturbationKind::Scale => Perturbation::Scale(self.epsilon),
            PerturbationKind::Noise => Perturbation::Noise { epsilon: self.epsilon, seed: self.seed },
            PerturbationKind::Modulated => Perturbation::Modulated(self.epsilon),
        }
    }
}

/// Parse and validate a JSON config from text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Error::Config(e.inner().to_string())
        } else {
            Error::Config(format!("{path}: {}", e.inner()))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Contents of a field file.
#[derive(Clone, Debug)]
pub enum StoredField {
    Real(Field),
    Complex(ComplexField),
}

impl StoredField {
    pub fn grid(&self) -> &Arc<Grid> {
        match self {
            StoredField::Real(f) => f.grid(),
            StoredField::Complex(f) => f.grid(),
        }
    }

    pub fn into_real(self) -> Result<Field> {
        match self {
            StoredField::Real(f) => Ok(f),
            StoredField::Complex(_) => Err(Error::Format("expected a real field, found complex".into())),
        }
    }
}

fn header(grid: &Grid, dtype: u8) -> Result<Vec<u8>> {
    let n = u32::try_from(grid.n()).map_err(|_| Error::Format("n does not fit in u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(grid.dim() as u8);
    out.push(dtype);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&grid.length().to_le_bytes());
    Ok(out)
}

pub fn encode_field(field: &Field) -> Result<Vec<u8>> {
    let mut out = header(field.grid(), 0)?;
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_complex_field(field: &ComplexField) -> Result<Vec<u8>> {
    let mut out = header(field.grid(), 1)?;
    for c in field.values() {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<StoredField> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("version mismatch: file has {version}, expected {FORMAT_VERSION}")));
    }
    let dim = bytes[8] as usize;
    let dtype = bytes[9];
    let n = u32_at(12) as usize;
    let length = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let grid = make_grid(dim, n, length).map_err(|e| Error::Format(format!("bad grid in header: {e}")))?;
    let width = match dtype {
        0 => 1,
        1 => 2,
        d => return Err(Error::Format(format!("unknown dtype {d}"))),
    };
    let expected = grid.len() * width * 8;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Format(format!("truncated payload: {} of {expected} bytes", payload.len())));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!("trailing bytes: {} beyond payload", payload.len() - expected)));
    }
    let vals: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    match dtype {
        0 => Ok(StoredField::Real(Field::new(grid, vals)?)),
        _ => {
            let cs = vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            Ok(StoredField::Complex(ComplexField::new(grid, cs)?))
        }
    }
}

pub fn save_field(path: &Path, field: &Field) -> Result<()> {
    fs::write(path, encode_field(field)?)?;
    Ok(())
}

pub fn save_complex_field(path: &Path, field: &ComplexField) -> Result<()> {
    fs::write(path, encode_complex_field(field)?)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<StoredField> {
    decode_field(&fs::read(path)?)
}

/// Numbers in CSV and reports: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a numeric table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!("row has {} cells, header {}", row.len(), header.len())));
        }
        w.write_record(row.iter().map(|&v| fmt_f64(v))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub command: Command,
    pub config: RunConfig,
    pub threads: usize,
    pub determinism: String,
    pub wall_time_s: f64,
    pub exit_code: i32,
    pub flags: Vec<String>,
    pub outputs: Vec<OutputEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Recompute every checksum listed in `dir/manifest.json`.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    for entry in &manifest.outputs {
        let actual = sha256_file(&dir.join(&entry.file))?;
        if actual != entry.sha256 {
            return Err(Error::Format(format!("checksum mismatch for {}", entry.file)));
        }
    }
    Ok(manifest)
}

/// Collects outputs of one run directory.
struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
    flags: Vec<String>,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunDir { dir: dir.to_path_buf(), files: Vec::new(), flags: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        let path = self.path(name);
        let mut f = fs::File::create(path)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let path = self.path(name);
        write_csv(&path, header, rows)
    }

    fn field(&mut self, name: &str, f: &Field) -> Result<()> {
        let path = self.path(name);
        save_field(&path, f)
    }

    fn complex_field(&mut self, name: &str, f: &ComplexField) -> Result<()> {
        let path = self.path(name);
        save_complex_field(&path, f)
    }

    fn flag(&mut self, flags: &[String]) {
        for f in flags {
            if !self.flags.contains(f) {
                self.flags.push(f.clone());
            }
        }
    }
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// 0 on success, 2 when a check of the run itself failed.
    pub exit_code: i32,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Exit code for an error: 2 for numerical failures of valid requests, 1 otherwise.
pub fn exit_code_for(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

/// Execute `cfg`, writing outputs under `out` (or `cfg.output_dir`). The
/// manifest is written last.
pub fn run(cfg: &RunConfig, out: Option<&Path>, threads: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let threads = threads.max(1);
    let start = Instant::now();
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let mut rd = RunDir::create(&dir)?;
    info!("running {} into {}", cfg.command.name(), dir.display());
    let exit_code = dispatch(cfg, &mut rd, threads)?;
    let mut outputs = Vec::with_capacity(rd.files.len());
    for name in &rd.files {
        let path = rd.dir.join(name);
        outputs.push(OutputEntry { file: name.clone(), sha256: sha256_file(&path)?, bytes: fs::metadata(&path)?.len() });
    }
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cfg.command,
        config: cfg.clone(),
        threads,
        determinism: "outputs depend only on the config and seed; --threads only runs sweep jobs concurrently and \
                      results are independent of it"
            .into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        exit_code,
        flags: rd.flags.clone(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST_NAME), format!("{text}\n"))?;
    Ok(RunOutcome { exit_code, dir, manifest })
}

#[derive(Serialize)]
struct GroundStateSummary<'a> {
    status: crate::solvers::SolveStatus,
    converged: bool,
    alpha: f64,
    mass: f64,
    el_residual: f64,
    iterations: usize,
    stabilizing_factor: Option<f64>,
    final_dt: Option<f64>,
    functionals: &'a crate::functionals::FunctionalRecord,
}

fn summarize(r: &GroundStateResult) -> GroundStateSummary<'_> {
    GroundStateSummary {
        status: r.status,
        converged: r.converged,
        alpha: r.alpha,
        mass: r.mass,
        el_residual: r.el_residual,
        iterations: r.iterations,
        stabilizing_factor: r.stabilizing_factor,
        final_dt: r.final_dt,
        functionals: &r.functionals,
    }
}

fn petviashvili(cfg: &RunConfig) -> Result<GroundStateResult> {
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let init = default_initial_guess(&params, params.alpha, &grid);
    petviashvili_solve(&params, &init, PetviashviliOptions { tol: cfg.tol, max_iter: cfg.max_iter })
}

/// Profile from `input`, or a fresh Petviashvili solve.
fn profile(cfg: &RunConfig) -> Result<Field> {
    match &cfg.input {
        Some(path) => {
            let u = load_field(Path::new(path))?.into_real()?;
            if u.grid().dim() != cfg.dim {
                return Err(bad("input", format!("field has dim {}, config dim {}", u.grid().dim(), cfg.dim)));
            }
            Ok(u)
        }
        None => Ok(petviashvili(cfg)?.profile),
    }
}

fn dispatch(cfg: &RunConfig, rd: &mut RunDir, threads: usize) -> Result<i32> {
    let cmd = cfg.command;
    match cmd {
        Command::GroundState => {
            let r = petviashvili(cfg)?;
            rd.field("profile.m4nl", &r.profile)?;
            rd.json("summary.json", &summarize(&r))?;
        }
        Command::MassMin => {
            let params = cfg.params()?;
            let grid = cfg.grid()?;
            let mu = need("mu", cfg.mu, cmd)?;
            let init = match &cfg.input {
                Some(_) => profile(cfg)?,
                None => crate::analysis::best_dilation_guess(&params, mu, &grid)?.0,
            };
            let r = normalized_gradient_flow(&params, mu, &init, cfg.flow())?;
            rd.field("profile.m4nl", &r.profile)?;
            rd.json("summary.json", &summarize(&r))?;
        }
        Command::Spectrum => {
            let params = cfg.params()?;
            let u = profile(cfg)?;
            let opts = EigenOptions { kernel_tol: cfg.kernel_tol, seed: cfg.seed, ..EigenOptions::default() };
            let rep = smallest_eigenpairs_with(&u, &params, cfg.which, cfg.k, opts)?;
            let rows: Vec<Vec<f64>> = rep
                .eigenvalues
                .iter()
                .zip(&rep.eigen_residuals)
                .enumerate()
                .map(|(i, (&l, &r))| vec![i as f64, l, r])
                .collect();
            rd.csv("spectrum.csv", &["index", "eigenvalue", "residual"], &rows)?;
            rd.flag(&rep.warnings);
            rd.json("summary.json", &rep)?;
        }
        Command::StabilityCondition => {
            let params = cfg.params()?;
            let u = profile(cfg)?;
            let rep = stability_condition(&u, &params)?;
            rd.json("summary.json", &rep)?;
        }
        Command::Evolve => {
            let params = cfg.params()?;
            let u = profile(cfg)?;
            let psi0 = cfg.perturbation().apply(&u)?;
            let run = split_step_evolve(&psi0, &params, cfg.dt.unwrap_or(1e-3), cfg.t_end, cfg.record_every, None)?;
            let t = &run.trace;
            let rows: Vec<Vec<f64>> =
                (0..t.times.len()).map(|i| vec![t.times[i], t.mass[i], t.energy[i]]).collect();
            rd.csv("trace.csv", &["t", "mass", "energy"], &rows)?;
            rd.complex_field("final_state.m4nl", &run.state)?;
            rd.flag(&t.flags);
            #[derive(Serialize)]
            struct S<'a> {
                status: crate::evolution::RunStatus,
                perturbation: &'a str,
                relative_mass_drift: f64,
                relative_energy_drift: f64,
                flags: &'a [String],
            }
            rd.json(
                "summary.json",
                &S {
                    status: run.status,
                    perturbation: &t.perturbation,
                    relative_mass_drift: t.relative_mass_drift(),
                    relative_energy_drift: t.relative_energy_drift(),
                    flags: &t.flags,
                },
            )?;
        }
        Command::StabilityExperiment => {
            let params = cfg.params()?;
            let u = profile(cfg)?;
            let opts = ExperimentOptions { t_end: cfg.t_end, dt: cfg.dt.unwrap_or(1e-3), record_every: cfg.record_every };
            let res = stability_experiment(&u, &params, cfg.perturbation(), opts)?;
            let t = &res.trace;
            let rows: Vec<Vec<f64>> = (0..t.times.len())
                .map(|i| vec![t.times[i], t.mass[i], t.energy[i], t.orbital_distance[i]])
                .collect();
            rd.csv("trace.csv", &["t", "mass", "energy", "orbital_distance"], &rows)?;
            rd.flag(&t.flags);
            #[derive(Serialize)]
            struct S<'a> {
                status: crate::evolution::RunStatus,
                perturbation: &'a str,
                sup_distance: f64,
                initial_distance: f64,
                fitted_constant: Option<f64>,
                verdict: &'a str,
                relative_mass_drift: f64,
                relative_energy_drift: f64,
            }
            rd.json(
                "summary.json",
                &S {
                    status: res.status,
                    perturbation: &t.perturbation,
                    sup_distance: res.sup_distance,
                    initial_distance: res.initial_distance,
                    fitted_constant: res.fitted_constant,
                    verdict: &res.verdict,
                    relative_mass_drift: t.relative_mass_drift(),
                    relative_energy_drift: t.relative_energy_drift(),
                },
            )?;
        }
        Command::DecayFit => {
            let params = cfg.params()?;
            let u = profile(cfg)?;
            let fit = fit_decay_rate(&u, Some(&params), cfg.window_fraction)?;
            let signs = sign_report(&u, &params)?;
            rd.flag(&fit.flags);
            #[derive(Serialize)]
            struct S<'a> {
                decay: &'a crate::analysis::DecayFit,
                sign: &'a crate::analysis::SignReport,
            }
            rd.json("summary.json", &S { decay: &fit, sign: &signs })?;
        }
        Command::CriticalMass => {
            let params = cfg.params()?;
            let opts = CriticalMassOptions {
                dim: cfg.dim,
                n: cfg.n,
                length: cfg.length,
                flow: cfg.flow(),
                max_probes: cfg.max_probes,
            };
            let lo = need("mu_lo", cfg.mu_lo, cmd)?;
            let hi = need("mu_hi", cfg.mu_hi, cmd)?;
            let res = critical_mass_search(&params, lo, hi, cfg.bisect_tol, &opts)?;
            let rows: Vec<Vec<f64>> = res
                .probes
                .iter()
                .map(|p| vec![p.mu, p.energy, p.outer_fraction, if p.negative { 1.0 } else { 0.0 }])
                .collect();
            rd.csv("probes.csv", &["mu", "energy", "outer_fraction", "negative"], &rows)?;
            rd.json("summary.json", &res)?;
        }
        Command::GammaLimit => {
            let opts =
                GammaLimitOptions { dim: cfg.dim, n: cfg.n, length: cfg.length, flow: cfg.flow(), threads };
            let gammas = cfg.gamma_list.clone().unwrap_or_default();
            let mu = need("mu", cfg.mu, cmd)?;
            let study = gamma_limit_study(cfg.beta, mu, cfg.sigma, &gammas, &opts)?;
            let rows: Vec<Vec<f64>> = study
                .rows
                .iter()
                .map(|r| vec![r.gamma, r.alpha, r.err_l2, r.err_h1, r.err_h2, r.gamma_lap, r.el_residual])
                .collect();
            rd.csv("gamma_limit.csv", &["gamma", "alpha", "err_l2", "err_h1", "err_h2", "gamma_lap", "el_residual"], &rows)?;
            rd.json("summary.json", &study)?;
        }
        Command::Shoot1d => {
            let params = cfg.params()?;
            let u0 = need("u0", cfg.u0, cmd)?;
            let upp0 = need("upp0", cfg.upp0, cmd)?;
            let res = shoot_1d(&params, u0, upp0, cfg.x_max, cfg.step, ShootOptions::default())?;
            let rows: Vec<Vec<f64>> =
                res.trajectory.iter().map(|s| vec![s.x, s.u, s.up, s.upp, s.uppp, s.hamiltonian]).collect();
            rd.csv("trajectory.csv", &["x", "u", "up", "upp", "uppp", "hamiltonian"], &rows)?;
            #[derive(Serialize)]
            struct S {
                outcome: crate::analysis::ShootOutcome,
                x_event: f64,
                h_drift: f64,
                h_drift_total: f64,
                lambda: (f64, f64),
            }
            rd.json(
                "summary.json",
                &S { outcome: res.outcome, x_event: res.x_event, h_drift: res.h_drift, h_drift_total: res.h_drift_total, lambda: res.lambda },
            )?;
        }
        Command::Verify => {
            let u = profile(cfg)?;
            let base = cfg.params()?;
            // without a prescribed frequency, use the one implied by the field
            let params = match cfg.alpha {
                Some(_) => base,
                None => {
                    let mass = crate::functionals::evaluate(&u, &base, None)?.mass;
                    let alpha = crate::functionals::lagrange_multiplier(&u, &base, mass)?.alpha;
                    base.with_alpha(alpha)
                }
            };
            let rep = identity_report(&u, &params)?;
            let tol = cfg.verify_tol;
            let checks = [
                ("pohozaev_relative", rep.pohozaev.relative.abs()),
                ("el_residual", rep.el_residual),
                ("alpha_mismatch", (rep.multiplier.alpha - params.alpha).abs() / params.alpha.abs().max(1.0)),
                ("consistency", rep.consistency_defects.iter().cloned().fold(0.0, f64::max)),
            ];
            let failed: Vec<String> =
                checks.iter().filter(|(_, v)| !(*v < tol)).map(|(k, v)| format!("{k} = {v:.3e} exceeds {tol:.1e}")).collect();
            #[derive(Serialize)]
            struct S<'a> {
                alpha: f64,
                tolerance: f64,
                passed: bool,
                failures: &'a [String],
                report: &'a crate::functionals::IdentityReport,
            }
            rd.json(
                "summary.json",
                &S { alpha: params.alpha, tolerance: tol, passed: failed.is_empty(), failures: &failed, report: &rep },
            )?;
            if !failed.is_empty() {
                rd.flag(&failed);
                return Ok(2);
            }
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"command":"ground-state","gamma":1,"beta":5,"alpha":4,"sigma":1,"dim":1,"n":512,"L":80}"#
    }

    #[test]
    fn defaults_are_filled() {
        let c = parse_config_str(minimal()).unwrap();
        assert_eq!(c.tol, 1e-10);
        assert_eq!(c.max_iter, 2000);
        assert_eq!(c.command, Command::GroundState);
    }

    #[test]
    fn errors_name_the_key() {
        let e = parse_config_str(r#"{"command":"ground-state","gamma":1,"beta":5,"alpha":4,"sigma":-1}"#).unwrap_err();
        assert!(e.to_string().contains("sigma"), "{e}");
        let e = parse_config_str(r#"{"command":"ground-state","gamma":1,"beta":5,"alpha":4,"sigma":1,"bogus":2}"#).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = parse_config_str(r#"{"command":"ground-state","gamma":1,"beta":"x","alpha":4,"sigma":1}"#).unwrap_err();
        assert!(e.to_string().contains("beta"), "{e}");
        let e = parse_config_str(r#"{"command":"ground-state","gamma":1,"gamma":2,"beta":5,"alpha":4,"sigma":1}"#).unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
    }

    #[test]
    fn field_codec_round_trip() {
        let g = make_grid(2, 16, 3.0).unwrap();
        let f = Field::from_fn(Arc::clone(&g), |x| x[0].sin() * x[1] - 1e-300);
        let back = decode_field(&encode_field(&f).unwrap()).unwrap().into_real().unwrap();
        assert!(f.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut bytes = encode_field(&f).unwrap();
        bytes.pop();
        assert!(decode_field(&bytes).unwrap_err().to_string().contains("truncated"));
        bytes[0] = b'X';
        assert!(decode_field(&bytes).unwrap_err().to_string().contains("bad magic"));
    }
}
