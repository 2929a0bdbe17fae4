//! Command-line front end: Hamiltonian and observable files, the commands,
//! and sweep CSV output.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::groundspace::{GroundOptions, GroundSpace};
use crate::model::{
    build_lattice, named_model, normalize_terms, HamiltonianSpec, LatticeKind, ModelKind, Observable, SpinSystem,
};
use crate::numerics::{CMatrix, C64};
use crate::oracle::{OracleOptions, ITERATIVE_LIMIT};
use crate::reduction::{reduce, IsometryStep, ReduceOptions, ReductionOutcome};
use crate::variational::{
    estimate, lambda_sweep, reference_estimate, symmetric_estimate, EstimateResult, Family, Method, Subspace,
    SweepOptions, SweepRow,
};

/// Hermiticity tolerance applied when loading matrices.
pub const LOAD_HERMITIAN_TOL: f64 = 1e-9;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FRUSTRATED: i32 = 2;
pub const EXIT_NOT_NATURAL: i32 = 3;

pub const CSV_HEADER: [&str; 9] =
    ["lambda", "method", "energy", "energy_per_site", "bound_type", "mz_per_site", "ground_dim", "runtime_ms", "error"];

/// A complex number as `[re, im]`.
pub type Pair = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeEntry {
    pub kind: String,
    pub dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub a: usize,
    pub b: usize,
    pub h: Vec<Vec<Pair>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleEntry {
    pub v: usize,
    pub h: Vec<Vec<Pair>>,
}

/// Either a named model (`model`, `lattice`, `lambda`) or an explicit term
/// list (`sites`, `edges`, `single`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single: Option<Vec<SingleEntry>>,
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation { location: location.into(), message: message.into() }
}

fn matrix_from_pairs(rows: &[Vec<Pair>], dim: usize, location: &str) -> Result<CMatrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(invalid(location, format!("expected a {dim}x{dim} matrix of [re, im] pairs")));
    }
    let data = rows.iter().flat_map(|r| r.iter().map(|&[re, im]| C64::new(re, im))).collect();
    let m = CMatrix::from_vec(dim, dim, data);
    if !m.is_hermitian(LOAD_HERMITIAN_TOL) {
        return Err(invalid(location, format!("matrix is not Hermitian (defect {:.3e})", m.hermitian_defect())));
    }
    Ok(m)
}

fn matrix_to_pairs(m: &CMatrix) -> Vec<Vec<Pair>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub fn lattice_dims(dims: &[usize]) -> Result<(usize, usize)> {
    match dims {
        [x] => Ok((*x, 1)),
        [x, y] => Ok((*x, *y)),
        _ => Err(invalid("lattice.dims", "expected one or two dimensions")),
    }
}

impl HamiltonianFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.to_spec()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Explicit form of a spec; `ground_shift` is not represented.
    pub fn explicit(spec: &HamiltonianSpec) -> Self {
        Self {
            sites: Some(spec.n_sites()),
            edges: Some(
                spec.two_spin.iter().map(|(&(a, b), h)| EdgeEntry { a, b, h: matrix_to_pairs(h) }).collect(),
            ),
            single: Some(spec.single_spin.iter().map(|(&v, h)| SingleEntry { v, h: matrix_to_pairs(h) }).collect()),
            ..Self::default()
        }
    }

    pub fn to_spec(&self) -> Result<HamiltonianSpec> {
        let named = self.model.is_some() || self.lattice.is_some() || self.lambda.is_some();
        let explicit = self.sites.is_some() || self.edges.is_some() || self.single.is_some();
        match (named, explicit) {
            (true, true) => Err(invalid("<root>", "mixes the model form and the explicit form")),
            (false, false) => Err(invalid("<root>", "needs either `model` or `sites`")),
            (true, false) => {
                let model: ModelKind = self.model.as_deref().ok_or_else(|| invalid("model", "missing"))?.parse()?;
                let lattice = self.lattice.as_ref().ok_or_else(|| invalid("lattice", "missing"))?;
                let kind: LatticeKind = lattice.kind.parse()?;
                let lambda = self.lambda.unwrap_or(0.0);
                Ok(named_model(model, build_lattice(kind, lattice_dims(&lattice.dims)?)?, lambda))
            }
            (false, true) => {
                let n = self.sites.ok_or_else(|| invalid("sites", "missing"))?;
                let edges = self.edges.as_deref().unwrap_or_default();
                let mut pairs = Vec::with_capacity(edges.len());
                for (i, e) in edges.iter().enumerate() {
                    let loc = format!("edges[{i}] ({}, {})", e.a, e.b);
                    if e.a >= n || e.b >= n {
                        return Err(invalid(loc, format!("site index out of range for {n} sites")));
                    }
                    if e.a == e.b {
                        return Err(invalid(loc, "an edge needs two distinct sites"));
                    }
                    pairs.push((e.a.min(e.b), e.a.max(e.b)));
                }
                let system = SpinSystem::new(n, pairs)?;
                let mut spec = HamiltonianSpec::new(system);
                for (i, e) in edges.iter().enumerate() {
                    let loc = format!("edges[{i}] ({}, {})", e.a, e.b);
                    spec.add_two_spin(e.a, e.b, matrix_from_pairs(&e.h, 4, &loc)?)?;
                }
                for (i, s) in self.single.as_deref().unwrap_or_default().iter().enumerate() {
                    let loc = format!("single[{i}] (site {})", s.v);
                    if s.v >= n {
                        return Err(invalid(loc, format!("site index out of range for {n} sites")));
                    }
                    spec.add_single_spin(s.v, matrix_from_pairs(&s.h, 2, &loc)?)?;
                }
                Ok(spec)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Real(f64),
    Complex(Pair),
}

impl Coefficient {
    fn value(&self) -> C64 {
        match *self {
            Coefficient::Real(x) => C64::new(x, 0.0),
            Coefficient::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PauliEntry {
    pub coeff: Coefficient,
    /// e.g. `"Z0 Z1"`; empty for the identity.
    pub pauli: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableEntry {
    pub name: String,
    pub terms: Vec<PauliEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableFile {
    pub observables: Vec<ObservableEntry>,
}

impl ObservableFile {
    pub fn parse(text: &str) -> Result<Vec<(String, Observable)>> {
        let file: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.observables
            .iter()
            .map(|o| {
                let mut obs = Observable { terms: vec![] };
                for t in &o.terms {
                    obs = obs.add(Observable::parse_string(t.coeff.value(), &t.pauli)?);
                }
                Ok((o.name.clone(), obs))
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Vec<(String, Observable)>> {
        let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Rounds to `digits` significant digits, trims trailing zeros, and prints
/// values below `1e-12` in magnitude as `0`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x.abs() < 1e-12 {
        return "0".into();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = digits as i32 - 1 - exponent;
    if (0..=20).contains(&decimals) {
        let s = format!("{:.*}", decimals as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{:.*e}", digits - 1, x)
    }
}

/// Parses `"0,0.1,0.2"` or `"start:stop:step"` (inclusive); empty means no points.
pub fn parse_lambda_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(vec![]);
    }
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{t}` in λ grid")));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(Error::Parse("range grid must be start:stop:step".into()));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step <= 0.0 || !step.is_finite() {
            return Err(Error::Parse("grid step must be positive".into()));
        }
        let count = ((stop - start) / step + 1e-9).floor();
        if count < 0.0 {
            return Ok(vec![]);
        }
        // snap to 12 decimals so 3 * 0.1 prints as 0.3
        Ok((0..=count as usize).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
    } else {
        s.split(',').filter(|t| !t.trim().is_empty()).map(num).collect()
    }
}

pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect()
}

/// Shortest round-trip form, switching to an exponent outside `[1e-5, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn optional(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// Writes rows in the sweep CSV schema. `runtime_ms` is only filled when
/// `timing` is set, so that default output is reproducible byte for byte.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow], timing: bool) -> Result<()> {
    let io = |e: csv::Error| Error::Parse(format!("writing CSV: {e}"));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER).map_err(io)?;
    for row in rows {
        let n = row.n_sites.max(1) as f64;
        let record: [String; 9] = match &row.result {
            Ok(r) => [
                format_float(row.lambda),
                row.method.name().into(),
                format_float(r.energy),
                format_float(r.energy / n),
                r.bound.name().into(),
                optional(r.observables.get("mz").copied()),
                r.ground_dim.map(|d| d.to_string()).unwrap_or_default(),
                if timing { format!("{:.3}", r.wall_time.as_secs_f64() * 1e3) } else { String::new() },
                String::new(),
            ],
            Err(e) => [
                format_float(row.lambda),
                row.method.name().into(),
                String::new(),
                String::new(),
                row.method.bound_type().name().into(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ],
        };
        w.write_record(&record).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Parse(format!("writing CSV: {e}")))?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "ffspin", version, about = "Frustration-free spin-1/2 Hamiltonians: decision, ground manifolds, estimates")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Relative rank tolerance used by the reduction.
    #[arg(long, global = true, default_value_t = crate::numerics::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Largest system handed to exact diagonalization.
    #[arg(long, global = true, default_value_t = ITERATIVE_LIMIT)]
    pub oracle_limit: usize,
    /// Worker threads for sweeps (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

impl GlobalArgs {
    fn ground_options(&self) -> GroundOptions {
        GroundOptions { reduce: ReduceOptions { tol: self.tol, ..Default::default() }, ..Default::default() }
    }

    fn oracle_options(&self) -> OracleOptions {
        OracleOptions { iterative_limit: self.oracle_limit, seed: self.seed, ..Default::default() }
    }

    fn sweep_options(&self) -> SweepOptions {
        SweepOptions { seed: self.seed, oracle: self.oracle_options(), ..Default::default() }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide frustration-freeness; exit 0 (yes), 2 (no), 3 (outside the natural class).
    Check { input: PathBuf },
    /// Ground-manifold expectation values (maximal mixture).
    Expect {
        input: PathBuf,
        /// Observable file.
        observables: Option<PathBuf>,
        /// Inline Pauli string such as "Z1 Z2"; may be repeated.
        #[arg(long = "op")]
        ops: Vec<String>,
    },
    /// Dump local factors, α angles and the isometry network as JSON.
    Groundspace { input: PathBuf },
    /// One energy estimate, printed as JSON.
    Estimate {
        input: PathBuf,
        #[arg(long, default_value = "symmetric")]
        method: String,
        /// Frustration-free reference whose ground manifold replaces the
        /// symmetric subspace (symmetric method only).
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        observables: Option<PathBuf>,
    },
    /// λ sweep of a named model, written as CSV.
    Sweep(SweepArgs),
    /// Exact diagonalization.
    Ed {
        input: PathBuf,
        #[arg(short, long, default_value_t = 1)]
        k: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub lattice: String,
    /// `LX` or `LX,LY`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    /// `a,b,c` or `start:stop:step`; may be empty.
    #[arg(long, allow_hyphen_values = true)]
    pub lambdas: String,
    #[arg(long, default_value = "symmetric,product,ed")]
    pub methods: String,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Fill the runtime_ms column (makes output non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

/// Prints `error: ...` and maps the error to an exit status.
fn fail(e: &Error) -> i32 {
    eprintln!("error: {e}");
    match e {
        Error::FrustratedInput | Error::FrustratedReference => EXIT_FRUSTRATED,
        Error::NotNatural(_) => EXIT_NOT_NATURAL,
        _ => EXIT_ERROR,
    }
}

fn load_spec(path: &Path) -> Result<HamiltonianSpec> {
    HamiltonianFile::load(path)?.to_spec()
}

fn pairs_json(m: &CMatrix) -> serde_json::Value {
    json!(matrix_to_pairs(m))
}

fn estimate_json(r: &EstimateResult, n: usize) -> serde_json::Value {
    json!({
        "method": r.method.name(),
        "energy": r.energy,
        "energy_per_site": r.energy / n as f64,
        "bound_type": r.bound.name(),
        "observables": r.observables,
        "ground_dim": r.ground_dim,
        "runtime_ms": r.wall_time.as_secs_f64() * 1e3,
    })
}

fn cmd_check(global: &GlobalArgs, input: &Path, out: &mut dyn Write) -> Result<i32> {
    let spec = normalize_terms(&load_spec(input)?)?;
    let opts = global.ground_options().reduce;
    let outcome = reduce(&spec, &opts)?;
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| Error::Parse(e.to_string()));
    match &outcome {
        ReductionOutcome::Frustrated { witness, network, .. } => {
            w(out, "frustration-free: no".into())?;
            w(out, "ground dimension: 0".into())?;
            w(out, format!("witness: {witness:?}"))?;
            w(out, format!("network depth: {}", network.depth()))?;
            Ok(EXIT_FRUSTRATED)
        }
        ReductionOutcome::CompleteHomogeneous(c) => {
            w(out, "frustration-free: yes".into())?;
            w(out, format!("ground dimension: {}", c.ground_dimension()))?;
            w(out, format!("n_c: {}", c.n_c()))?;
            w(out, format!("components: {}", c.components.len()))?;
            w(out, format!("network depth: {}", c.network.depth()))?;
            Ok(EXIT_OK)
        }
    }
}

fn cmd_expect(
    global: &GlobalArgs,
    input: &Path,
    observables: Option<&Path>,
    ops: &[String],
    out: &mut dyn Write,
) -> Result<i32> {
    let spec = load_spec(input)?;
    let mut list = match observables {
        Some(p) => ObservableFile::load(p)?,
        None => vec![],
    };
    for op in ops {
        list.push((op.clone(), Observable::parse_string(C64::new(1.0, 0.0), op)?));
    }
    if list.is_empty() {
        return Err(Error::Parse("no observables given (file or --op)".into()));
    }
    let n = spec.n_sites();
    for (_, obs) in &list {
        if let Some(max) = obs.max_site().filter(|&m| m >= n) {
            return Err(Error::SiteOutOfRange { site: max, n });
        }
    }
    let gs = GroundSpace::build(&spec, &global.ground_options())?;
    for (name, obs) in &list {
        let v = gs.expectation(obs)?;
        writeln!(out, "{name}\t{}", format_significant(v, 12)).map_err(|e| Error::Parse(e.to_string()))?;
    }
    Ok(EXIT_OK)
}

fn network_json(net: &crate::reduction::IsometryNetwork) -> serde_json::Value {
    let steps: Vec<serde_json::Value> = net
        .steps
        .iter()
        .map(|s| match s {
            IsometryStep::PairContraction { parent, daughter, isometry } => json!({
                "type": "contract", "parent": parent, "daughter": daughter, "isometry": pairs_json(isometry),
            }),
            IsometryStep::SpinFix { site, state } => json!({
                "type": "fix", "site": site, "state": [[state[0].re, state[0].im], [state[1].re, state[1].im]],
            }),
        })
        .collect();
    json!({ "root_sites": net.root_sites, "leaf_sites": net.leaf_sites, "depth": net.depth(), "steps": steps })
}

fn cmd_groundspace(global: &GlobalArgs, input: &Path, out: &mut dyn Write) -> Result<i32> {
    let spec = load_spec(input)?;
    let gs = GroundSpace::build(&spec, &global.ground_options())?;
    let components: Vec<serde_json::Value> = gs
        .model
        .components
        .iter()
        .map(|c| {
            let factors: serde_json::Map<String, serde_json::Value> =
                c.local_factors.iter().map(|(v, m)| (v.to_string(), pairs_json(m))).collect();
            let angles: Vec<f64> = c.alphas.iter().map(|a| a[1].re.atan2(a[0].re)).collect();
            json!({
                "root": c.root,
                "sites": c.sites,
                "local_factors": factors,
                "gauge": pairs_json(&c.gauge),
                "alpha_angles": angles,
            })
        })
        .collect();
    let doc = json!({
        "frustration_free": true,
        "ground_dimension": gs.model.ground_dimension(),
        "n_c": gs.outcome.n_c(),
        "components": components,
        "network": network_json(&gs.model.network),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json")).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(EXIT_OK)
}

fn cmd_estimate(
    global: &GlobalArgs,
    input: &Path,
    method: &str,
    reference: Option<&Path>,
    observables: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let spec = load_spec(input)?;
    let method: Method = method.parse()?;
    let obs = match observables {
        Some(p) => ObservableFile::load(p)?,
        None => vec![],
    };
    let result = match (method, reference) {
        (Method::Symmetric, Some(r)) => reference_estimate(&spec, &load_spec(r)?, &obs, &global.ground_options())?,
        (_, Some(_)) => return Err(Error::Parse("--reference only applies to the symmetric method".into())),
        (Method::Symmetric, None) => symmetric_estimate(&spec, Subspace::Symmetric, &obs)?,
        (m, None) => {
            if !obs.is_empty() {
                return Err(Error::Parse("--observables only applies to the symmetric method".into()));
            }
            estimate(&spec, m, &global.sweep_options())?
        }
    };
    let doc = estimate_json(&result, spec.n_sites());
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json")).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(EXIT_OK)
}

fn cmd_sweep(global: &GlobalArgs, args: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let family = Family {
        model: args.model.parse()?,
        lattice: args.lattice.parse()?,
        dims: lattice_dims(&args.dims)?,
    };
    // fail early on a bad lattice rather than once per row
    build_lattice(family.lattice, family.dims)?;
    let lambdas = parse_lambda_grid(&args.lambdas)?;
    let methods = parse_methods(&args.methods)?;
    let rows = lambda_sweep(&family, &lambdas, &methods, &global.sweep_options());
    match &args.output {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            write_sweep_csv(std::io::BufWriter::new(file), &rows, args.timing)?;
        }
        None => write_sweep_csv(out, &rows, args.timing)?,
    }
    Ok(EXIT_OK)
}

fn cmd_ed(global: &GlobalArgs, input: &Path, k: usize, out: &mut dyn Write) -> Result<i32> {
    let spec = load_spec(input)?;
    let g = crate::oracle::exact_ground(&spec, k, &global.oracle_options())?;
    let observables = crate::variational::ground_observables(&g, spec.n_sites())?;
    let doc = json!({
        "energy": g.energy,
        "energy_per_site": g.energy / spec.n_sites() as f64,
        "degeneracy": g.degeneracy,
        "energies": g.energies,
        "observables": observables,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json")).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(EXIT_OK)
}

/// Runs a parsed command, writing its report to `out`; returns the exit status.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> i32 {
    let g = &cli.global;
    if g.threads > 0 {
        // the global pool can only be set once per process; later calls keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(g.threads).build_global();
    }
    let result = match &cli.command {
        Command::Check { input } => cmd_check(g, input, out),
        Command::Expect { input, observables, ops } => cmd_expect(g, input, observables.as_deref(), ops, out),
        Command::Groundspace { input } => cmd_groundspace(g, input, out),
        Command::Estimate { input, method, reference, observables } => {
            cmd_estimate(g, input, method, reference.as_deref(), observables.as_deref(), out)
        }
        Command::Sweep(args) => cmd_sweep(g, args, out),
        Command::Ed { input, k } => cmd_ed(g, input, *k, out),
    };
    result.unwrap_or_else(|e| fail(&e))
}

/// Entry point used by the binary.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli, &mut std::io::stdout().lock()),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_OK
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"{"model": "heisenberg_ferro", "lattice": {"kind": "chain", "dims": [4]}, "lambda": 0.0}"#;

    #[test]
    fn named_form_builds() {
        let f = HamiltonianFile::parse(CHAIN).unwrap();
        let spec = f.to_spec().unwrap();
        assert_eq!(spec.n_sites(), 4);
        assert_eq!(spec.two_spin.len(), 3);
    }

    #[test]
    fn explicit_round_trip() {
        let spec = HamiltonianFile::parse(CHAIN).unwrap().to_spec().unwrap();
        let mut spec = spec;
        spec.add_single_spin(2, crate::numerics::pauli_y()).unwrap();
        let file = HamiltonianFile::explicit(&spec);
        let text = file.to_json();
        let back = HamiltonianFile::parse(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_json(), text);
        let rebuilt = back.to_spec().unwrap();
        assert_eq!(rebuilt.two_spin, spec.two_spin);
        assert_eq!(rebuilt.single_spin, spec.single_spin);
    }

    #[test]
    fn rejects_mixed_and_bad_files() {
        let mixed = r#"{"model": "tfi", "lattice": {"kind": "chain", "dims": [3]}, "sites": 3}"#;
        assert!(matches!(HamiltonianFile::parse(mixed), Err(Error::Validation { .. })));
        assert!(matches!(HamiltonianFile::parse("{}"), Err(Error::Validation { .. })));
        assert!(matches!(HamiltonianFile::parse("{\"sites\": 2,"), Err(Error::Parse(_))));
        assert!(matches!(HamiltonianFile::parse(r#"{"sites": 2, "colour": 1}"#), Err(Error::Parse(_))));
        let z = [[0.0, 0.0]; 4];
        let mut h = vec![z.to_vec(); 4];
        h[0][1] = [1.0, 0.0];
        let bad = serde_json::to_string(&json!({"sites": 3, "edges": [{"a": 1, "b": 2, "h": h}]})).unwrap();
        match HamiltonianFile::parse(&bad) {
            Err(Error::Validation { location, .. }) => assert!(location.contains("(1, 2)"), "{location}"),
            other => panic!("{other:?}"),
        }
        let out_of_range = r#"{"sites": 2, "edges": [{"a": 0, "b": 5, "h": []}]}"#;
        assert!(matches!(HamiltonianFile::parse(out_of_range), Err(Error::Validation { .. })));
    }

    #[test]
    fn observable_file_parses() {
        let text = r#"{"observables": [{"name": "zz", "terms": [{"coeff": 1.0, "pauli": "Z1 Z2"}]},
            {"name": "mix", "terms": [{"coeff": [0.5, 0.0], "pauli": "X0"}, {"coeff": 2, "pauli": ""}]}]}"#;
        let obs = ObservableFile::parse(text).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[1].1.terms.len(), 2);
        assert!(ObservableFile::parse(r#"{"observables": [{"name": "q", "terms": [{"coeff": 1, "pauli": "Q0"}]}]}"#)
            .is_err());
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(format_significant(1e-17, 12), "0");
        assert_eq!(format_significant(-2.0, 12), "-2");
        assert_eq!(format_significant(123.456, 4), "123.5");
        assert_eq!(format_significant(6.02e23, 3), "6.02e23");
        assert_eq!(format_float(-3.25e-17), "-3.25e-17");
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(0.0), "0");
    }

    #[test]
    fn lambda_grids() {
        assert_eq!(parse_lambda_grid("").unwrap(), Vec::<f64>::new());
        assert_eq!(parse_lambda_grid("0:0.5:0.1").unwrap(), vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_lambda_grid("0:2:0.25").unwrap().len(), 9);
        assert_eq!(parse_lambda_grid("1, 0.5").unwrap(), vec![1.0, 0.5]);
        assert!(parse_lambda_grid("0:1").is_err());
        assert!(parse_lambda_grid("0:1:0").is_err());
    }

    #[test]
    fn csv_layout() {
        let family = Family { model: ModelKind::Tfi, lattice: LatticeKind::Chain, dims: (3, 1) };
        let rows = lambda_sweep(&family, &[0.0], &[Method::Product, Method::Ed], &SweepOptions::default());
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,ed,-2,"), "{}", lines[1]);
        assert!(lines[2].starts_with("0,product,-2,"), "{}", lines[2]);
        assert!(!text.contains('\r'));
        let mut empty = Vec::new();
        write_sweep_csv(&mut empty, &[], false).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }
}
