//! Batch driver: reads matrices and settings from files, dispatches to the
//! solvers and writes a JSON report (plus a CSV curve for `sweep`).
//!
//! Matrix files are headerless CSV, one matrix row per line. Reports and
//! matrices are written with 17 significant digits, so every float reads back
//! bit for bit. Output files are replaced atomically.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::continuous::{
    continuous_lowrank, refine_to_convergence, PolynomialKernel, QuadratureRule, RefinementPolicy,
};
use crate::dmd::{dmd_modes, snapshot_pairs, SnapshotSeries};
use crate::error::{Error, Result};
use crate::kernel::{kernel_lowrank_solve_with_jitter, KernelSpec};
use crate::linalg::{check_finite, DenseMatrix, SchattenP, ToleranceConfig};
use crate::oracle::{consistency_report, optimality_certificate, OracleReport};
use crate::solver::{solve_lowrank, solve_weighted, LowRankSolution};

/// Relative amount by which an oracle candidate must beat the closed form
/// before `verify` reports a violation.
pub const MARGIN_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Weighted,
    Dmd,
    KernelDmd,
    Continuous,
    Verify,
    Sweep,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Command::Solve => "solve",
            Command::Weighted => "weighted",
            Command::Dmd => "dmd",
            Command::KernelDmd => "kernel-dmd",
            Command::Continuous => "continuous",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        };
        f.write_str(name)
    }
}

/// One invocation of the driver, as parsed from the command line.
#[derive(Debug, Clone, Parser)]
#[command(
    name = "lowrank",
    version,
    about = "Optimal rank-k operators in Schatten norms"
)]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// Source matrix (for `dmd` without `--y`, the snapshot series).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Target matrix.
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Rank bound.
    #[arg(short = 'k')]
    pub k: Option<usize>,
    /// Schatten order, a number or `inf`.
    #[arg(short = 'p', default_value = "2")]
    pub p: SchattenP,
    /// Report path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rank_rtol: Option<f64>,
    /// Largest rank visited by `sweep`.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// JSON settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl RunConfig {
    /// A configuration with defaults for everything but the command and output.
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        Self {
            command,
            x: None,
            y: None,
            k: None,
            p: SchattenP::FROBENIUS,
            out: out.into(),
            seed: None,
            rank_rtol: None,
            kmax: None,
            config: None,
        }
    }
}

/// Contents of the `--config` file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// PSD weight matrix for `weighted`.
    pub weight: Option<PathBuf>,
    pub kernel: Option<KernelSpec>,
    pub jitter: f64,
    pub continuous: Option<ContinuousConfig>,
    pub verify: VerifyConfig,
    pub tolerances: Option<ToleranceConfig>,
    /// Where `sweep` writes its curve; defaults to the report path with a
    /// `.csv` extension.
    pub sweep_csv: Option<PathBuf>,
    /// Where to write `M*_k` as CSV, when wanted.
    pub matrix_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleFamily {
    #[default]
    GaussLegendre,
    CompositeTrapezoid,
}

impl RuleFamily {
    pub fn build(self, q: usize, a: f64, b: f64) -> Result<QuadratureRule> {
        match self {
            RuleFamily::GaussLegendre => QuadratureRule::gauss_legendre(q, a, b),
            RuleFamily::CompositeTrapezoid => QuadratureRule::composite_trapezoid(q, a, b),
        }
    }
}

/// Settings of the `continuous` command: polynomial kernels on an interval.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousConfig {
    #[serde(default = "unit_interval")]
    pub interval: [f64; 2],
    #[serde(default)]
    pub rule: RuleFamily,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    pub kx: PolynomialKernel,
    pub ky: PolynomialKernel,
    /// When present, the node count is doubled until the error settles.
    pub refine: Option<RefinementPolicy>,
}

fn unit_interval() -> [f64; 2] {
    [0.0, 1.0]
}

fn default_nodes() -> usize {
    16
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub samples: usize,
    pub als_starts: usize,
    pub als_iters: usize,
    pub p_list: Vec<SchattenP>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            als_starts: 10,
            als_iters: 500,
            p_list: vec![SchattenP::TRACE, SchattenP::FROBENIUS, SchattenP::SPECTRAL],
        }
    }
}

/// Oracle results attached to a `verify` report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSection {
    pub certificate: OracleReport,
    pub consistency: OracleReport,
    pub margin_rtol: f64,
    pub passed: bool,
}

/// The report object written to `--out`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: Command,
    pub inputs: BTreeMap<String, PathBuf>,
    /// SHA-256 of each input file's bytes.
    pub digests: BTreeMap<String, String>,
    pub k: usize,
    pub p: SchattenP,
    pub rank_x: usize,
    pub z_sigma: Vec<f64>,
    pub achieved_error: f64,
    pub predicted_error: f64,
    pub spectral_gap: Option<f64>,
    pub oracle: Option<OracleSection>,
    pub seed: Option<u64>,
    pub tolerances: ToleranceConfig,
    pub version: String,
    /// Command-specific extras (spectra, refinement traces, warnings).
    pub details: BTreeMap<String, Value>,
}

/// Parses headerless CSV text. `path` is only used in error messages; columns
/// in errors are 1-based field positions.
pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<DenseMatrix> {
    let mut entries = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let mut found = 0;
        for (j, field) in line.split(',').enumerate() {
            let token = field.trim();
            let value = token
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && !token.is_empty());
            let value = value.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                column: j + 1,
                token: token.to_string(),
            })?;
            entries.push(value);
            found += 1;
        }
        match cols {
            None => cols = Some(found),
            Some(expected) if expected != found => {
                return Err(Error::RaggedRows {
                    path: path.to_path_buf(),
                    line: i + 1,
                    expected,
                    found,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Config(format!("{}: no matrix rows", path.display())))?;
    Ok(DenseMatrix::from_row_slice(rows, cols, &entries))
}

pub fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path).map_err(|source| io_error(path, source))?;
    parse_matrix_csv(&text, path)
}

/// CSV text of `m` with 17 significant digits per entry.
pub fn format_matrix_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    check_finite(m)?;
    write_atomic(path, format_matrix_csv(m).as_bytes())
}

/// JSON text of `value` with every float written as `{:.16e}`.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision::default());
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_report(path: &Path, report: &Report) -> Result<()> {
    write_atomic(path, to_json_string(report)?.as_bytes())
}

#[derive(Default)]
struct FullPrecision(PrettyFormatter<'static>);

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

/// Input files read so far, with their digests.
#[derive(Default)]
struct Inputs {
    paths: BTreeMap<String, PathBuf>,
    digests: BTreeMap<String, String>,
}

impl Inputs {
    fn read(&mut self, name: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        self.paths.insert(name.to_string(), path.to_path_buf());
        self.digests
            .insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(bytes)
    }

    fn matrix(&mut self, name: &str, path: &Path) -> Result<DenseMatrix> {
        let bytes = self.read(name, path)?;
        parse_matrix_csv(&String::from_utf8_lossy(&bytes), path)
    }
}

struct Session<'a> {
    run: &'a RunConfig,
    file: FileConfig,
    base_dir: PathBuf,
    inputs: Inputs,
    tol: ToleranceConfig,
    details: BTreeMap<String, Value>,
}

impl Session<'_> {
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn required(&mut self, name: &str, path: &Option<PathBuf>) -> Result<DenseMatrix> {
        let path = path
            .as_ref()
            .ok_or_else(|| Error::Config(format!("`{}` needs --{name}", self.run.command)))?;
        self.inputs.matrix(name, path)
    }

    fn k(&self) -> Result<usize> {
        self.run
            .k
            .ok_or_else(|| Error::Config(format!("`{}` needs -k", self.run.command)))
    }

    fn write_solution(&mut self, m: &DenseMatrix) -> Result<()> {
        if let Some(path) = self.file.matrix_out.clone() {
            let path = self.resolve(&path);
            write_matrix_csv(&path, m)?;
            self.details
                .insert("matrix_out".into(), json!(path.display().to_string()));
        }
        Ok(())
    }

    fn report(self, k: usize, p: SchattenP, sol: Summary) -> Report {
        Report {
            command: self.run.command,
            inputs: self.inputs.paths,
            digests: self.inputs.digests,
            k,
            p,
            rank_x: sol.rank_x,
            z_sigma: sol.z_sigma,
            achieved_error: sol.achieved_error,
            predicted_error: sol.predicted_error,
            spectral_gap: sol.spectral_gap,
            oracle: None,
            seed: self.run.seed,
            tolerances: self.tol,
            version: env!("CARGO_PKG_VERSION").to_string(),
            details: self.details,
        }
    }
}

/// The solver outputs shared by every report.
struct Summary {
    rank_x: usize,
    z_sigma: Vec<f64>,
    achieved_error: f64,
    predicted_error: f64,
    spectral_gap: Option<f64>,
}

impl From<&LowRankSolution> for Summary {
    fn from(s: &LowRankSolution) -> Self {
        Self {
            rank_x: s.rank_x,
            z_sigma: s.z_sigma.clone(),
            achieved_error: s.achieved_error,
            predicted_error: s.predicted_error,
            spectral_gap: s.spectral_gap,
        }
    }
}

fn complex_list(values: &[num_complex::Complex64]) -> Value {
    Value::Array(values.iter().map(|z| json!([z.re, z.im])).collect())
}

/// Executes `config`, writes the report (and any side files) and returns it.
///
/// `verify` writes its report before failing with
/// [`Error::MarginViolation`], so the evidence is kept.
pub fn run(config: &RunConfig) -> Result<Report> {
    let mut inputs = Inputs::default();
    let (file, base_dir) = match &config.config {
        Some(path) => {
            let bytes = inputs.read("config", path)?;
            let file: FileConfig = serde_json::from_slice(&bytes)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (file, dir)
        }
        None => (FileConfig::default(), PathBuf::new()),
    };
    let mut tol = file.tolerances.unwrap_or_default();
    if let Some(r) = config.rank_rtol {
        tol.rank_rtol = r;
    }
    tol.validate()?;

    let mut details = BTreeMap::new();
    if config.p.is_quasi_norm() {
        details.insert(
            "warnings".into(),
            json!([format!(
                "p = {} < 1 is a quasi-norm; the error formula is reported but optimality is not certified",
                config.p
            )]),
        );
    }
    let mut session = Session {
        run: config,
        file,
        base_dir,
        inputs,
        tol,
        details,
    };

    match config.command {
        Command::Solve => run_solve(session),
        Command::Weighted => run_weighted(session),
        Command::Dmd => run_dmd(session),
        Command::KernelDmd => run_kernel(session),
        Command::Continuous => run_continuous(session),
        Command::Verify => run_verify(session),
        Command::Sweep => {
            let out = run_sweep(&mut session)?;
            let report = session.report(out.0, config.p, out.1);
            write_report(&config.out, &report)?;
            Ok(report)
        }
    }
}

fn finish(session: Session<'_>, k: usize, p: SchattenP, summary: Summary) -> Result<Report> {
    let out = session.run.out.clone();
    let report = session.report(k, p, summary);
    write_report(&out, &report)?;
    Ok(report)
}

fn run_solve(mut s: Session<'_>) -> Result<Report> {
    let x = s.required("x", &s.run.x.clone())?;
    let y = s.required("y", &s.run.y.clone())?;
    let k = s.k()?;
    let sol = solve_lowrank(&x, &y, k, s.run.p, &s.tol)?;
    s.write_solution(&sol.m_star)?;
    finish(s, k, sol.p, (&sol).into())
}

fn run_weighted(mut s: Session<'_>) -> Result<Report> {
    let x = s.required("x", &s.run.x.clone())?;
    let y = s.required("y", &s.run.y.clone())?;
    let k = s.k()?;
    let weight = s
        .file
        .weight
        .clone()
        .ok_or_else(|| Error::Config("`weighted` needs `weight` in the config file".into()))?;
    let path = s.resolve(&weight);
    let kmat = s.inputs.matrix("weight", &path)?;
    let sol = solve_weighted(&x, &y, &kmat, k, s.run.p, &s.tol)?;
    s.write_solution(&sol.m_star)?;
    finish(s, k, sol.p, (&sol).into())
}

fn run_dmd(mut s: Session<'_>) -> Result<Report> {
    let first = s.required("x", &s.run.x.clone())?;
    let (x, y) = match s.run.y.clone() {
        Some(path) => (first, s.inputs.matrix("y", &path)?),
        None => snapshot_pairs(&SnapshotSeries::new(first)?),
    };
    let k = s.k()?;
    let sol = solve_lowrank(&x, &y, k, s.run.p, &s.tol)?;
    let spectrum = dmd_modes(&sol, &x, &y, &s.tol)?;
    s.details
        .insert("eigenvalues".into(), complex_list(&spectrum.eigenvalues));
    s.details
        .insert("residuals".into(), json!(spectrum.residuals));
    s.write_solution(&sol.m_star)?;
    finish(s, k, sol.p, (&sol).into())
}

fn run_kernel(mut s: Session<'_>) -> Result<Report> {
    if s.run.p != SchattenP::FROBENIUS {
        return Err(Error::Config(
            "`kernel-dmd` measures errors in the Hilbert-Schmidt norm; use -p 2".into(),
        ));
    }
    let kernel = s
        .file
        .kernel
        .ok_or_else(|| Error::Config("`kernel-dmd` needs `kernel` in the config file".into()))?;
    let x = s.required("x", &s.run.x.clone())?;
    let y = s.required("y", &s.run.y.clone())?;
    let k = s.k()?;
    let sol = kernel_lowrank_solve_with_jitter(&kernel, &x, &y, k, s.file.jitter, &s.tol)?;
    s.details.insert("kernel".into(), json!(kernel));
    s.details.insert("jitter".into(), json!(sol.jitter));
    s.details
        .insert("k_effective".into(), json!(sol.k_effective()));
    s.details
        .insert("eigenvalues".into(), complex_list(&sol.eigenvalues));
    let gap = (k >= 1 && k < sol.z_sigma.len()).then(|| sol.z_sigma[k - 1] - sol.z_sigma[k]);
    let summary = Summary {
        rank_x: sol.rank_x,
        z_sigma: sol.z_sigma.clone(),
        achieved_error: sol.achieved_error_sq.max(0.0).sqrt(),
        predicted_error: sol.predicted_error_sq.max(0.0).sqrt(),
        spectral_gap: gap,
    };
    finish(s, k, SchattenP::FROBENIUS, summary)
}

fn run_continuous(mut s: Session<'_>) -> Result<Report> {
    let cfg = s.file.continuous.clone().ok_or_else(|| {
        Error::Config("`continuous` needs a `continuous` section in the config file".into())
    })?;
    let k = s.k()?;
    let [a, b] = cfg.interval;
    let sol = match cfg.refine {
        Some(policy) => {
            let (sol, trace) = refine_to_convergence(
                &cfg.kx,
                &cfg.ky,
                k,
                s.run.p,
                |q| cfg.rule.build(q, a, b),
                policy,
                &s.tol,
            )?;
            s.details.insert("refinement".into(), json!(trace));
            s.details
                .insert("nodes".into(), json!(trace.last().map_or(0, |t| t.nodes)));
            sol
        }
        None => {
            let rule = cfg.rule.build(cfg.nodes, a, b)?;
            s.details.insert("nodes".into(), json!(rule.len()));
            continuous_lowrank(&cfg.kx, &cfg.ky, &rule, k, s.run.p, &s.tol)?
        }
    };
    s.write_solution(&sol.m_star)?;
    finish(s, k, sol.p, (&sol).into())
}

fn run_verify(mut s: Session<'_>) -> Result<Report> {
    let x = s.required("x", &s.run.x.clone())?;
    let y = s.required("y", &s.run.y.clone())?;
    let k = s.k()?;
    let seed = s.run.seed.unwrap_or(0);
    let v = s.file.verify.clone();
    let sol = solve_lowrank(&x, &y, k, s.run.p, &s.tol)?;
    let certificate = optimality_certificate(
        &x,
        &y,
        k,
        v.samples,
        v.als_starts,
        v.als_iters,
        seed,
        &s.tol,
    )?;
    let mut p_list = vec![s.run.p];
    p_list.extend(v.p_list.iter().filter(|p| **p != s.run.p));
    let consistency = consistency_report(&x, &y, k, &p_list, seed, &s.tol)?;
    let passed = !certificate.beaten(MARGIN_RTOL);
    let margin = certificate.margin;
    s.write_solution(&sol.m_star)?;

    let out = s.run.out.clone();
    let mut report = s.report(k, sol.p, (&sol).into());
    report.seed = Some(seed);
    report.oracle = Some(OracleSection {
        certificate,
        consistency,
        margin_rtol: MARGIN_RTOL,
        passed,
    });
    write_report(&out, &report)?;
    if passed {
        Ok(report)
    } else {
        Err(Error::MarginViolation { margin })
    }
}

/// Runs every rank `0..=kmax`, writes the curve and returns the summary for
/// the reported rank (`-k`, or `kmax` when absent).
fn run_sweep(s: &mut Session<'_>) -> Result<(usize, Summary)> {
    let x = s.required("x", &s.run.x.clone())?;
    let y = s.required("y", &s.run.y.clone())?;
    let kmax = s.run.kmax.unwrap_or(y.nrows());
    let k = s.run.k.unwrap_or(kmax);
    if k > kmax {
        return Err(Error::Config(format!("-k {k} exceeds --kmax {kmax}")));
    }
    let mut csv = String::from("k,achieved_error,predicted_error\n");
    let mut chosen = None;
    for j in 0..=kmax {
        let sol = solve_lowrank(&x, &y, j, s.run.p, &s.tol)?;
        csv.push_str(&format!(
            "{j},{:.16e},{:.16e}\n",
            sol.achieved_error, sol.predicted_error
        ));
        if j == k {
            chosen = Some(Summary::from(&sol));
        }
    }
    let path = match s.file.sweep_csv.clone() {
        Some(p) => s.resolve(&p),
        None => s.run.out.with_extension("csv"),
    };
    write_atomic(&path, csv.as_bytes())?;
    s.details
        .insert("sweep_csv".into(), json!(path.display().to_string()));
    s.details.insert("kmax".into(), json!(kmax));
    Ok((k, chosen.expect("k <= kmax was checked")))
}
