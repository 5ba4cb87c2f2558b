//! `reach`: check, run, monitor, rewrite, difftest and generate programs.
//!
//! Exit codes: 0 success, 1 type error / refused rewrite / unequal answers,
//! 2 parse or usage error, 3 monitor violations, 4 timeout or inconclusive,
//! 5 stuck.

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use reach_core::eval::{eval_closed, EvalOutcome, DEFAULT_FUEL};
use reach_core::harness::{difftest, generate_corpus, DiffVerdict, Exec, GenConfig};
use reach_core::monitor::{monitor_closed, MonitorOptions};
use reach_core::parse::parse_term_spanned;
use reach_core::rewrite::{rewrite_at, show_witness, RewriteOutcome, RewriteRule};
use reach_core::syntax::{format_path, parse_path};
use reach_core::{typecheck, CheckMode, Elaborated, Qualifier, Term, TypeEnv};

const SCHEMA: &str = "reach/1";

const OK: u8 = 0;
const REJECTED: u8 = 1;
const MALFORMED: u8 = 2;
const VIOLATIONS: u8 = 3;
const TIMEOUT: u8 = 4;
const STUCK: u8 = 5;

#[derive(Parser)]
#[command(name = "reach", version, about = "Reachability types with write effects")]
struct Cli {
    /// Emit line-delimited JSON records instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Reorder,
    Beta,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check a program and print its qualified type and effect.
    Check {
        file: PathBuf,
        #[arg(long, default_value = "full")]
        mode: CheckMode,
    },
    /// Check, then evaluate and print the answer.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "full")]
        mode: CheckMode,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
    },
    /// Check, then evaluate under the store monitor.
    Monitor {
        file: PathBuf,
        #[arg(long, default_value = "full")]
        mode: CheckMode,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
        /// Also check results and latent effects at every call boundary.
        #[arg(long)]
        call_boundary: bool,
        /// Print frame certificates for every application.
        #[arg(long)]
        frames: bool,
        /// Declare an empty referent for the allocation at this path.
        #[arg(long, hide = true)]
        corrupt_referent: Option<String>,
    },
    /// Apply a reordering or β-inlining at a path and print the result.
    Rewrite {
        file: PathBuf,
        #[arg(long)]
        rule: RuleArg,
        /// Path of the subterm, `root` or dot-separated child indices.
        #[arg(long, default_value = "root")]
        at: String,
        #[arg(long, default_value = "full")]
        mode: CheckMode,
    },
    /// Run two closed programs and compare their answers.
    Difftest {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
    },
    /// Print randomly generated well-typed programs, one per line.
    Gen {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        depth: usize,
        #[arg(long, default_value = "full")]
        mode: CheckMode,
    },
}

struct Out {
    json: bool,
}

impl Out {
    fn record(&self, command: &str, mut body: Json, text: impl FnOnce() -> String) {
        if self.json {
            body["schema"] = json!(SCHEMA);
            body["command"] = json!(command);
            println!("{body}");
        } else {
            println!("{}", text());
        }
    }
}

fn load(path: &FsPath) -> Result<Term, String> {
    let src = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_term_spanned(&src).map(|(t, _)| t).map_err(|e| {
        let at = e.span().map(|s| format!(":{s}")).unwrap_or_default();
        format!("{}{at}: {e}", path.display())
    })
}

fn elaborate(out: &Out, command: &str, t: &Term, mode: CheckMode) -> Result<Elaborated, u8> {
    typecheck(&TypeEnv::new(), t, mode).map_err(|e| {
        out.record(
            command,
            json!({"ok": false, "rule": e.rule, "code": e.code, "path": format_path(&e.path), "message": e.to_string()}),
            || format!("type error: {e}"),
        );
        REJECTED
    })
}

fn outcome_code(o: &EvalOutcome) -> u8 {
    match o {
        EvalOutcome::Done { .. } => OK,
        EvalOutcome::Timeout => TIMEOUT,
        EvalOutcome::Stuck(_) => STUCK,
    }
}

fn outcome_json(o: &EvalOutcome) -> Json {
    match o {
        EvalOutcome::Done { value, store } => json!({"status": "done", "value": value.to_string(), "store_size": store.len()}),
        EvalOutcome::Timeout => json!({"status": "timeout"}),
        EvalOutcome::Stuck(k) => json!({"status": "stuck", "kind": k}),
    }
}

fn check(out: &Out, file: &FsPath, mode: CheckMode) -> Result<u8, u8> {
    let t = load(file).map_err(report_malformed)?;
    let el = elaborate(out, "check", &t, mode)?;
    out.record(
        "check",
        json!({"ok": true, "mode": mode, "type": el.typing.qtype.to_string(), "effect": el.typing.effect.to_string()}),
        || format!("{}\neffect: {}", el.typing.qtype, el.typing.effect),
    );
    Ok(OK)
}

fn run(out: &Out, file: &FsPath, mode: CheckMode, fuel: u64) -> Result<u8, u8> {
    let t = load(file).map_err(report_malformed)?;
    elaborate(out, "run", &t, mode)?;
    let o = eval_closed(&t, fuel);
    out.record("run", outcome_json(&o), || o.to_string());
    Ok(outcome_code(&o))
}

struct MonitorArgs {
    mode: CheckMode,
    fuel: u64,
    call_boundary: bool,
    frames: bool,
    corrupt: Option<String>,
}

fn monitor(out: &Out, file: &FsPath, args: MonitorArgs) -> Result<u8, u8> {
    let t = load(file).map_err(report_malformed)?;
    let mut el = elaborate(out, "monitor", &t, args.mode)?;
    if let Some(p) = &args.corrupt {
        let path = parse_path(p).ok_or_else(|| report_malformed(format!("bad path `{p}`")))?;
        if !el.corrupt_referent(&path, Qualifier::empty()) {
            return Err(report_malformed(format!("no allocation at `{p}`")));
        }
    }
    let opts = MonitorOptions { call_boundary: args.call_boundary, every_node: true };
    let r = monitor_closed(&el, args.fuel, opts);
    if out.json {
        let mut body = outcome_json(&r.outcome);
        body["violations"] = json!(r.violations);
        if args.frames {
            body["frames"] = json!(r.frames);
        }
        out.record("monitor", body, String::new);
    } else {
        println!("{}", r.outcome);
        if args.frames {
            for f in &r.frames {
                println!("frame at {} (step {}): preserved {:?}, may write {:?}", f.path, f.step, f.preserved, f.allowed);
            }
        }
        for v in &r.violations {
            println!("violation: {v}");
        }
        println!("violations: {}", r.violations.len());
    }
    Ok(if r.violations.is_empty() { outcome_code(&r.outcome) } else { VIOLATIONS })
}

fn rewrite(out: &Out, file: &FsPath, rule: RuleArg, at: &str, mode: CheckMode) -> Result<u8, u8> {
    let t = load(file).map_err(report_malformed)?;
    let path = parse_path(at).ok_or_else(|| report_malformed(format!("bad path `{at}`")))?;
    let rule = match rule {
        RuleArg::Reorder => RewriteRule::reorder_for(mode),
        RuleArg::Beta => RewriteRule::BetaInline,
    };
    match rewrite_at(&TypeEnv::new(), &t, &path, rule, mode) {
        Ok(RewriteOutcome::Rewritten { rule, term, witness, .. }) => {
            out.record(
                "rewrite",
                json!({"ok": true, "rule": rule.name(), "term": term.to_string(), "witness": witness}),
                || term.to_string(),
            );
            Ok(OK)
        }
        Ok(RewriteOutcome::Refused { rule, condition, witness }) => {
            out.record(
                "rewrite",
                json!({"ok": false, "rule": rule.name(), "condition": condition, "witness": witness}),
                || format!("refused [{rule}]: {condition}\n{}", show_witness(&witness)),
            );
            Ok(REJECTED)
        }
        Err(e) => {
            out.record("rewrite", json!({"ok": false, "error": e.to_string()}), || format!("error: {e}"));
            Ok(REJECTED)
        }
    }
}

fn diff(out: &Out, a: &FsPath, b: &FsPath, fuel: u64) -> Result<u8, u8> {
    let (ta, tb) = (load(a).map_err(report_malformed)?, load(b).map_err(report_malformed)?);
    let v = difftest(&ta, &tb, fuel);
    out.record("difftest", json!({"verdict": v}), || v.to_string());
    Ok(match v {
        DiffVerdict::Equal(_) => OK,
        DiffVerdict::Unequal(..) => REJECTED,
        DiffVerdict::Inconclusive(_) => TIMEOUT,
    })
}

fn gen(out: &Out, count: usize, seed: u64, depth: usize, mode: CheckMode) -> u8 {
    let cfg = GenConfig::new(seed, depth, mode);
    for (i, t) in generate_corpus(&cfg, count, Exec::Parallel).iter().enumerate() {
        out.record("gen", json!({"index": i, "seed": seed, "mode": mode, "term": t.to_string()}), || t.to_string());
    }
    OK
}

fn report_malformed(msg: String) -> u8 {
    eprintln!("error: {msg}");
    MALFORMED
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Out { json: cli.json };
    let code = match cli.command {
        Command::Check { file, mode } => check(&out, &file, mode),
        Command::Run { file, mode, fuel } => run(&out, &file, mode, fuel),
        Command::Monitor { file, mode, fuel, call_boundary, frames, corrupt_referent } => monitor(
            &out,
            &file,
            MonitorArgs { mode, fuel, call_boundary, frames, corrupt: corrupt_referent },
        ),
        Command::Rewrite { file, rule, at, mode } => rewrite(&out, &file, rule, &at, mode),
        Command::Difftest { a, b, fuel } => diff(&out, &a, &b, fuel),
        Command::Gen { count, seed, depth, mode } => Ok(gen(&out, count, seed, depth, mode)),
    };
    ExitCode::from(code.unwrap_or_else(|c| c))
}
