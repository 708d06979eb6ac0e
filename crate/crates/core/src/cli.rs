//! Command-line front end: `validate`, `adjust`, `diagnose`, `build`.
//!
//! Exit codes are 0 for success, 1 for domain errors and 2 for usage
//! errors. Every error is reported on one line as `error[code]: message`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::diagnostics::{self, DiagnosticReport, StageDiagnostics};
use crate::engine::{self, AdjustmentPlan, Observation};
use crate::error::{Error, Result};
use crate::kernel::{Matrix, Vector};
use crate::model_file;
use crate::models::{self, DlmSpec, NStepSpec, NoiseTiming};
use crate::oracle;
use crate::tree::{BeliefTree, NodeRef};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Values smaller than this print as zero.
const PRINT_ZERO: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "bltree", version, about = "Local Bayes linear adjustment over belief trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args, Clone, Copy)]
struct OutputFlags {
    /// Print structured JSON instead of text.
    #[arg(long, global = true)]
    json_out: bool,
    /// Print full precision instead of 3 significant figures.
    #[arg(long, global = true)]
    precise: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file: shapes, acyclicity and positive semi-definiteness.
    Validate { path: PathBuf },
    /// Observe one node and propagate the adjustment through the tree.
    Adjust {
        path: PathBuf,
        /// Observed node.
        #[arg(long)]
        node: String,
        /// Observe only these quantities of the node.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Observed values, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        values: Vec<f64>,
        /// Remove the observed quantities afterwards.
        #[arg(long)]
        prune: bool,
        /// Compare the result with a dense joint adjustment.
        #[arg(long)]
        verify_oracle: bool,
        /// Write the adjusted model here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjust by a sequence of observations and report diagnostics for a target node.
    Diagnose {
        path: PathBuf,
        #[arg(long)]
        target: String,
        /// `NODE=v1,v2` or `NODE/label1,label2=v1,v2`; repeat for later stages.
        #[arg(long = "obs", allow_hyphen_values = true)]
        observations: Vec<String>,
        /// Remove each observed block after its stage.
        #[arg(long)]
        prune: bool,
    },
    /// Write a model file for a structured model.
    Build {
        #[command(subcommand)]
        kind: BuildKind,
    },
}

#[derive(Debug, Subcommand)]
enum BuildKind {
    /// Linear growth dynamic linear model observed at each time point.
    Dlm {
        #[arg(long)]
        horizon: usize,
        #[arg(long, value_enum, default_value_t = Timing::BeforeTransition)]
        noise_timing: Timing,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chain over an n-step exchangeable collection.
    Nstep {
        #[arg(long)]
        n: usize,
        /// Number of observables.
        #[arg(long = "observables", visible_alias = "N")]
        observables: usize,
        #[arg(long, default_value_t = 1)]
        series_count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Timing {
    BeforeTransition,
    AfterTransition,
}

impl From<Timing> for NoiseTiming {
    fn from(t: Timing) -> Self {
        match t {
            Timing::BeforeTransition => NoiseTiming::BeforeTransition,
            Timing::AfterTransition => NoiseTiming::AfterTransition,
        }
    }
}

/// Entry point for the binary.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error[usage]: {first}");
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command, cli.output, out) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error[{}]: {msg}", e.code());
            EXIT_DOMAIN
        }
    }
}

fn dispatch(command: Command, output: OutputFlags, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Validate { path } => cmd_validate(&path, output, out),
        Command::Adjust {
            path,
            node,
            labels,
            values,
            prune,
            verify_oracle,
            out: out_path,
        } => {
            let node_ref = if labels.is_empty() {
                NodeRef::whole(node)
            } else {
                NodeRef::partial(node, labels)
            };
            let opts = AdjustOptions {
                prune,
                verify_oracle,
                out_path,
            };
            cmd_adjust(&path, Observation::new(node_ref, &values), &opts, output, out)
        }
        Command::Diagnose {
            path,
            target,
            observations,
            prune,
        } => {
            let obs = observations
                .iter()
                .map(|s| parse_observation(s))
                .collect::<Result<Vec<_>>>()?;
            cmd_diagnose(&path, &target, &obs, prune, output, out)
        }
        Command::Build { kind } => match kind {
            BuildKind::Dlm {
                horizon,
                noise_timing,
                out: out_path,
            } => {
                let spec = DlmSpec {
                    noise_timing: noise_timing.into(),
                    ..DlmSpec::linear_growth_example(horizon)
                };
                let tree = models::build_dlm(&spec)?;
                emit_built(&tree, "dlm", out_path.as_deref(), output, out)
            }
            BuildKind::Nstep {
                n,
                observables,
                series_count,
                out: out_path,
            } => {
                let tree = models::build_nstep_chain(&NStepSpec::triangular(n, observables, series_count))?;
                emit_built(&tree, "nstep", out_path.as_deref(), output, out)
            }
        },
    }
}

/// Parses `NODE=v,..` or `NODE/label,..=v,..`.
pub fn parse_observation(s: &str) -> Result<Observation> {
    let (lhs, rhs) = s
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("observation `{s}` must look like NODE=v1,v2")))?;
    let values = rhs
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("observation `{s}`: `{v}` is not a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let node = match lhs.split_once('/') {
        Some((name, labels)) => NodeRef::partial(name.trim(), labels.split(',').map(str::trim)),
        None => NodeRef::whole(lhs.trim()),
    };
    if node.name.is_empty() {
        return Err(Error::Parse(format!("observation `{s}` has no node name")));
    }
    Ok(Observation::new(node, &values))
}

fn load_valid(path: &Path) -> Result<BeliefTree> {
    let tree = model_file::read_model(path)?;
    let report = tree.validate();
    if let Some(f) = report.findings.iter().find(|f| f.is_error()) {
        return Err(Error::InvalidModel(f.to_string()));
    }
    Ok(tree)
}

// ---- number formatting ----

/// Rounds to `sig` significant figures, printing tiny values as zero.
pub fn format_sig(x: f64, sig: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x.abs() < PRINT_ZERO {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..9).contains(&mag) {
        return format!("{:.*e}", sig.saturating_sub(1), x);
    }
    let decimals = (sig as i32 - 1 - mag).max(0) as usize;
    let scale = 10f64.powi(mag - sig as i32 + 1);
    let rounded = if decimals == 0 { (x / scale).round() * scale } else { x };
    let s = format!("{:.*}", decimals, rounded);
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

#[derive(Clone, Copy)]
struct Fmt {
    precise: bool,
}

impl Fmt {
    fn num(&self, x: f64) -> String {
        if self.precise {
            if x.abs() < PRINT_ZERO {
                "0".into()
            } else {
                format!("{x}")
            }
        } else {
            format_sig(x, 3)
        }
    }

    fn vector(&self, v: &Vector) -> String {
        let parts: Vec<String> = v.iter().map(|&x| self.num(x)).collect();
        format!("({})", parts.join(", "))
    }

    fn matrix(&self, m: &Matrix) -> String {
        let rows: Vec<String> = m
            .row_iter()
            .map(|r| {
                let parts: Vec<String> = r.iter().map(|&x| self.num(x)).collect();
                format!("[{}]", parts.join(", "))
            })
            .collect();
        format!("[{}]", rows.join(", "))
    }
}

fn json_num(x: f64) -> Value {
    let x = if x.abs() < PRINT_ZERO { 0.0 } else { x };
    json!(x)
}

fn json_vector(v: &Vector) -> Value {
    Value::Array(v.iter().map(|&x| json_num(x)).collect())
}

fn json_matrix(m: &Matrix) -> Value {
    Value::Array(
        m.row_iter()
            .map(|r| Value::Array(r.iter().map(|&x| json_num(x)).collect()))
            .collect(),
    )
}

fn print_json(out: &mut dyn Write, v: &Value) -> Result<()> {
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(v).expect("json value serializes")
    )?;
    Ok(())
}

// ---- validate ----

fn cmd_validate(path: &Path, output: OutputFlags, out: &mut dyn Write) -> Result<i32> {
    let tree = model_file::read_model(path)?;
    let report = tree.validate();
    let valid = report.is_valid();
    if output.json_out {
        print_json(
            out,
            &json!({
                "valid": valid,
                "nodes": report.node_count,
                "arcs": report.arc_count,
                "acyclic": report.acyclic,
                "components": report.components,
                "findings": report.findings.iter().map(|f| json!({
                    "error": f.is_error(),
                    "message": f.to_string(),
                })).collect::<Vec<_>>(),
            }),
        )?;
    } else {
        writeln!(
            out,
            "{}: {} nodes, {} arcs, {} component{}",
            if valid { "valid" } else { "invalid" },
            report.node_count,
            report.arc_count,
            report.components.len(),
            if report.components.len() == 1 { "" } else { "s" }
        )?;
        for f in &report.findings {
            writeln!(out, "  {}: {f}", if f.is_error() { "error" } else { "note" })?;
        }
    }
    if valid {
        Ok(EXIT_OK)
    } else {
        let first = report
            .findings
            .iter()
            .find(|f| f.is_error())
            .expect("invalid report has an error");
        Err(Error::InvalidModel(first.to_string()))
    }
}

// ---- adjust ----

struct AdjustOptions {
    prune: bool,
    verify_oracle: bool,
    out_path: Option<PathBuf>,
}

fn observed_labels(tree: &BeliefTree, node: &NodeRef) -> Result<Vec<String>> {
    let n = tree.node(&node.name)?;
    Ok(match &node.selection {
        Some(sel) => sel.clone(),
        None => n.labels().to_vec(),
    })
}

fn cmd_adjust(
    path: &Path,
    obs: Observation,
    opts: &AdjustOptions,
    output: OutputFlags,
    out: &mut dyn Write,
) -> Result<i32> {
    let mut tree = load_valid(path)?;
    let oracle_posterior = if opts.verify_oracle {
        let joint = oracle::assemble_joint(&tree)?;
        let labels = observed_labels(&tree, &obs.node)?;
        Some(oracle::global_adjust(&joint, &labels, &obs.values)?)
    } else {
        None
    };
    let plan = engine::adjust(&mut tree, &obs)?;
    if opts.prune {
        engine::prune(&mut tree, &obs.node)?;
    }
    let deviation = match &oracle_posterior {
        Some(j) => Some(oracle::max_deviation(&tree, j)?),
        None => None,
    };
    if let Some(p) = &opts.out_path {
        model_file::write_model(&tree, p)?;
    }

    let resolution = |name: &str| plan.transform(name).map_or(0.0, |p| p.resolution());
    if output.json_out {
        let nodes: Vec<Value> = tree
            .nodes()
            .map(|(name, node)| {
                json!({
                    "name": name,
                    "labels": node.labels(),
                    "resolution": json_num(resolution(name)),
                    "transform": plan.transform(name).map(|p| json_matrix(&p.transform)),
                    "expectation": json_vector(node.spec().expectation()),
                    "variance": json_matrix(node.spec().variance()),
                })
            })
            .collect();
        print_json(
            out,
            &json!({
                "source": obs.node,
                "values": json_vector(&obs.values),
                "nodes": nodes,
                "oracle_deviation": deviation,
                "written": opts.out_path,
            }),
        )?;
    } else {
        write_adjust_text(
            out,
            &tree,
            &plan,
            &obs,
            deviation,
            opts,
            Fmt {
                precise: output.precise,
            },
        )?;
    }
    Ok(EXIT_OK)
}

fn write_adjust_text(
    out: &mut dyn Write,
    tree: &BeliefTree,
    plan: &AdjustmentPlan,
    obs: &Observation,
    deviation: Option<f64>,
    opts: &AdjustOptions,
    f: Fmt,
) -> Result<()> {
    writeln!(out, "adjusted by {} = {}", describe(&obs.node), f.vector(&obs.values))?;
    writeln!(out, "resolution: trace of the a priori resolution transform")?;
    let width = tree.node_names().map(str::len).max().unwrap_or(4).max(4);
    for (name, node) in tree.nodes() {
        let res = plan.transform(name).map_or(0.0, |p| p.resolution());
        writeln!(
            out,
            "{name:<width$}  resolution {}  E {}  V {}",
            f.num(res),
            f.vector(node.spec().expectation()),
            f.matrix(node.spec().variance()),
        )?;
    }
    if let Some(d) = deviation {
        writeln!(out, "oracle deviation: {d:.3e}")?;
    }
    if let Some(p) = &opts.out_path {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn describe(node: &NodeRef) -> String {
    match &node.selection {
        Some(sel) => format!("{}/{}", node.name, sel.join(",")),
        None => node.name.clone(),
    }
}

// ---- diagnose ----

fn cmd_diagnose(
    path: &Path,
    target: &str,
    observations: &[Observation],
    prune: bool,
    output: OutputFlags,
    out: &mut dyn Write,
) -> Result<i32> {
    let mut tree = load_valid(path)?;
    tree.node(target)?;
    let stages = diagnostics::diagnose_sequence(&mut tree, target, observations, prune)?;
    if output.json_out {
        print_json(
            out,
            &json!({
                "target": target,
                "stages": stages.iter().zip(observations).map(|(s, o)| stage_json(s, o)).collect::<Vec<_>>(),
            }),
        )?;
        return Ok(EXIT_OK);
    }
    let f = Fmt {
        precise: output.precise,
    };
    if stages.is_empty() {
        writeln!(out, "target {target}: no observations")?;
        return Ok(EXIT_OK);
    }
    writeln!(out, "target {target}")?;
    for (i, (s, o)) in stages.iter().zip(observations).enumerate() {
        writeln!(out, "stage {}: {} = {}", i + 1, describe(&o.node), f.vector(&o.values))?;
        write_report(out, "partial", &s.partial, s.partial_level, f)?;
        write_report(out, "cumulative", &s.cumulative, s.cumulative_level, f)?;
        writeln!(out, "  cumulative transform {}", f.matrix(&s.cumulative_transform))?;
    }
    Ok(EXIT_OK)
}

fn write_report(
    out: &mut dyn Write,
    kind: &str,
    r: &DiagnosticReport,
    level: diagnostics::DiagnosticLevel,
    f: Fmt,
) -> Result<()> {
    writeln!(
        out,
        "  {kind:<10}  bearing {}  size {}  expected {}  ratio {}  {level}",
        f.vector(&r.bearing),
        f.num(r.size),
        f.num(r.expected_size),
        r.size_ratio.map_or_else(|| "-".to_string(), |x| f.num(x)),
    )?;
    Ok(())
}

fn report_json(r: &DiagnosticReport, level: diagnostics::DiagnosticLevel) -> Value {
    json!({
        "bearing": json_vector(&r.bearing),
        "size": json_num(r.size),
        "expected_size": json_num(r.expected_size),
        "size_ratio": r.size_ratio.map(json_num),
        "flag": level.to_string(),
    })
}

fn stage_json(s: &StageDiagnostics, o: &Observation) -> Value {
    json!({
        "observation": o.node,
        "values": json_vector(&o.values),
        "partial_transform": json_matrix(&s.partial_transform),
        "partial": report_json(&s.partial, s.partial_level),
        "cumulative_transform": json_matrix(&s.cumulative_transform),
        "cumulative": report_json(&s.cumulative, s.cumulative_level),
    })
}

// ---- build ----

fn emit_built(
    tree: &BeliefTree,
    kind: &str,
    path: Option<&Path>,
    output: OutputFlags,
    out: &mut dyn Write,
) -> Result<i32> {
    let text = model_file::serialize_tree(tree)?;
    match path {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            if output.json_out {
                print_json(
                    out,
                    &json!({
                        "kind": kind,
                        "nodes": tree.len(),
                        "arcs": tree.arc_count(),
                        "written": p,
                    }),
                )?;
            } else {
                writeln!(
                    out,
                    "wrote {} ({} nodes, {} arcs)",
                    p.display(),
                    tree.len(),
                    tree.arc_count()
                )?;
            }
        }
        None if output.json_out => print_json(
            out,
            &json!({
                "kind": kind,
                "nodes": tree.len(),
                "arcs": tree.arc_count(),
                "model": text,
            }),
        )?,
        None => write!(out, "{text}")?,
    }
    Ok(EXIT_OK)
}
