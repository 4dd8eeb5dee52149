//! The `stackcfg` pipeline behind the command line: decode, partition,
//! solve, build the CFG, export, and optionally check against the oracle.
//!
//! Exit codes: 0 on success, 1 on input or analysis errors (with a JSON
//! error report on stderr), 2 when the soundness check finds violations.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::blocks::Partition;
use crate::bytecode::{decode_bytecode, fmt_pc, Pc, Program};
use crate::cfg::{build_cfg, export_dot, export_json};
use crate::equations::{solve_with, SolverMode};
use crate::oracle::check::{Outcome, Verdict};
use crate::oracle::{check_jumps_to, check_walk, enumerate, Bounds};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATIONS: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    Hex(String),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub input: Input,
    pub blocks: bool,
    /// `-` writes to stdout.
    pub dot: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub check: bool,
    pub bounds: Bounds,
    pub solver: SolverMode,
    pub verbosity: u8,
}

impl RunConfig {
    pub fn new(input: Input) -> Self {
        RunConfig {
            input,
            blocks: false,
            dot: None,
            json: None,
            check: false,
            bounds: Bounds::default(),
            solver: SolverMode::Worklist,
            verbosity: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.blocks && self.dot.is_none() && self.json.is_none() && !self.check {
            return Err(
                "nothing to do: pass at least one of --blocks, --dot, --json, --check".into(),
            );
        }
        if self.bounds.max_steps == 0 || self.bounds.max_states == 0 {
            return Err("--max-steps and --max-states must be positive".into());
        }
        Ok(())
    }
}

/// A failure reported as `{"error": {kind, pc, message}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub pc: Option<Pc>,
    pub message: String,
}

impl ErrorReport {
    fn new(kind: &'static str, pc: Option<Pc>, message: impl ToString) -> Self {
        ErrorReport {
            kind,
            pc,
            message: message.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self }).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
struct CheckReport {
    #[serde(flatten)]
    verdict: Verdict,
    vertices: usize,
    jump_edges: usize,
    next_edges: usize,
}

fn load(input: &Input) -> Result<Program, ErrorReport> {
    let text = match input {
        Input::Hex(h) => h.clone(),
        Input::File(path) => fs::read_to_string(path).map_err(|e| {
            ErrorReport::new("io", None, format!("cannot read {}: {e}", path.display()))
        })?,
    };
    let program = decode_bytecode(&text).map_err(|e| ErrorReport::new("decode", None, e))?;
    for d in program.diagnostics() {
        log::warn!("{d}");
    }
    Ok(program)
}

pub fn render_blocks(partition: &Partition) -> String {
    let mut out = String::new();
    for b in partition.blocks() {
        let _ = writeln!(
            out,
            "block {}..{} ({})",
            fmt_pc(b.start_pc),
            fmt_pc(b.end_pc),
            b.terminator
        );
        for i in &b.body {
            let _ = writeln!(out, "  {i}");
        }
    }
    if !partition.unreached().is_empty() {
        let pcs: Vec<String> = partition.unreached().iter().map(|pc| fmt_pc(*pc)).collect();
        let _ = writeln!(out, "unreached {}", pcs.join(" "));
    }
    out
}

fn emit(path: &Path, text: &str, out: &mut dyn Write) -> Result<(), ErrorReport> {
    let res = if path == Path::new("-") {
        out.write_all(text.as_bytes())
    } else {
        fs::write(path, text)
    };
    res.map_err(|e| ErrorReport::new("io", None, format!("cannot write {}: {e}", path.display())))
}

fn pipeline(config: &RunConfig, out: &mut dyn Write) -> Result<Option<Verdict>, ErrorReport> {
    config
        .validate()
        .map_err(|m| ErrorReport::new("config", None, m))?;
    let program = load(&config.input)?;
    let sys = solve_with(&program, config.solver)
        .map_err(|e| ErrorReport::new(e.kind(), Some(e.pc()), &e))?;
    log::info!(
        "solved in {} iteration(s), {} update(s)",
        sys.stats().iterations,
        sys.stats().updates
    );
    let cfg = build_cfg(&sys).map_err(|e| ErrorReport::new("cfg", None, e))?;

    if config.blocks {
        emit(Path::new("-"), &render_blocks(sys.partition()), out)?;
    }
    if let Some(path) = &config.dot {
        emit(path, &export_dot(&cfg, &sys), out)?;
    }
    if let Some(path) = &config.json {
        emit(path, &export_json(&cfg, &sys), out)?;
    }
    if !config.check {
        return Ok(None);
    }

    let ts = enumerate(&program, config.bounds)
        .map_err(|e| ErrorReport::new("oracle", Some(e.source.pc()), &e))?;
    let verdict = check_jumps_to(&program, &sys, &ts).merge(check_walk(&program, &cfg, &sys, &ts));
    let report = CheckReport {
        verdict: verdict.clone(),
        vertices: cfg.vertices.len(),
        jump_edges: cfg.jump_edges.len(),
        next_edges: cfg.next_edges.len(),
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report is serializable");
    text.push('\n');
    emit(Path::new("-"), &text, out)?;
    Ok(Some(verdict))
}

/// Runs the pipeline, writing reports to `out` and errors to `err`, and
/// returns the process exit code.
pub fn run(config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match pipeline(config, out) {
        Ok(Some(v)) if v.verdict == Outcome::Fail => EXIT_VIOLATIONS,
        Ok(Some(v)) if v.verdict == Outcome::Inconclusive => {
            let _ = writeln!(
                err,
                "warning: exploration bounds were hit; the check is inconclusive"
            );
            EXIT_OK
        }
        Ok(_) => EXIT_OK,
        Err(report) => {
            let _ = writeln!(err, "{}", report.to_json());
            EXIT_ERROR
        }
    }
}

/// [`run`] against the process's stdout and stderr.
pub fn run_stdio(config: &RunConfig) -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    let code = run(config, &mut stdout.lock(), &mut stderr.lock());
    let _ = io::stdout().flush();
    code
}
