//! Subcommands behind the `certrelu` and `certrelu-check` binaries.
//!
//! Exit codes: 0 success (SAT, UNSAT, or Accept); 1 proof rejected;
//! 2 unreadable or malformed input; 3 iteration or depth limit.

use std::fs;
use std::path::{Path, PathBuf};

use certrelu::checker::{check, repair, CheckOptions, CheckReport, RepairLog};
use certrelu::frontend::{encode, evaluate, parse_network, parse_property, Network, Property};
use certrelu::generate::{instance, GenConfig};
use certrelu::proof_format::{self, ProofFile};
use certrelu::search::{verify, Outcome, ProofTree, SearchError, SearchOptions, SearchStats};
use certrelu::simplex::{EngineError, EngineOptions};
use certrelu::{Float, Query, Rational, Scalar};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_LIMIT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Text,
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "certrelu", version, about = "Proof-producing verifier for ReLU networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decide a property; on UNSAT optionally write a proof.
    Verify(VerifyArgs),
    /// Check a proof against the network and property it claims to cover.
    Check(CheckArgs),
    /// Forward-evaluate a network on one input.
    Eval(EvalArgs),
    /// Write a random network and property.
    Gen(GenArgs),
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub network: PathBuf,
    pub property: PathBuf,
    #[arg(long)]
    pub proof_out: Option<PathBuf>,
    #[arg(long, value_enum, env = "CERTRELU_MODE", default_value = "exact")]
    pub mode: Mode,
    /// Accepted for uniform scripting; the solver itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: u64,
    /// Check the proof right after producing it.
    #[arg(long)]
    pub check: bool,
    /// Re-solve leaves the self-check rejects (implies --check).
    #[arg(long)]
    pub recover: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum, default_value = "text")]
    pub report: Report,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    pub network: PathBuf,
    pub property: PathBuf,
    pub proof: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Try to repair a rejected proof by re-solving failed leaves.
    #[arg(long)]
    pub recover: bool,
    /// Where to write the repaired proof.
    #[arg(long)]
    pub repaired_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: u64,
    #[arg(long, value_enum, default_value = "text")]
    pub report: Report,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub network: PathBuf,
    /// Input values, exact ("1/3") or decimal.
    #[arg(allow_negative_numbers = true, num_args = 0..)]
    pub input: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub inputs: usize,
    #[arg(long, default_value_t = 1)]
    pub outputs: usize,
    /// Files are written to `<out>.net` and `<out>.prop`.
    #[arg(long, default_value = "instance")]
    pub out: PathBuf,
}

/// A failure that ends a command with an exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))
}

pub fn load_inputs(net: &Path, prop: &Path) -> Result<(Network, Property, Query<Rational>), Failure> {
    let network = parse_network(&read(net)?).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", net.display())))?;
    let property = parse_property(&read(prop)?).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", prop.display())))?;
    let query = encode(&network, &property).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    Ok((network, property, query))
}

fn search_failure(e: SearchError) -> Failure {
    match e {
        SearchError::Engine(EngineError::IterationLimit(_)) | SearchError::DepthLimit(_) => fail(EXIT_LIMIT, e.to_string()),
        SearchError::InvalidQuery(_) => fail(EXIT_INPUT, e.to_string()),
        _ => fail(EXIT_REJECT, e.to_string()),
    }
}

fn run_search<S: Scalar>(query: &Query<Rational>, args: &VerifyArgs) -> Result<(Outcome<Rational>, SearchStats), Failure> {
    let opts = SearchOptions::<S> {
        engine: EngineOptions {
            max_iters: args.max_iters,
            ..EngineOptions::default()
        },
        jobs: args.jobs.max(1),
        ..SearchOptions::default()
    };
    let (outcome, stats) = verify(query, &opts).map_err(search_failure)?;
    let exact = match outcome {
        Outcome::Sat { assignment, inputs } => Outcome::Sat {
            assignment: assignment.iter().map(Scalar::to_rational).collect(),
            inputs: inputs.iter().map(Scalar::to_rational).collect(),
        },
        Outcome::Unsat { tree } => Outcome::Unsat {
            tree: tree.map(|t: ProofTree<S>| t.to_exact()),
        },
    };
    Ok((exact, stats))
}

fn join(values: &[Rational]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn check_summary(report: &CheckReport, log: Option<&RepairLog>) -> serde_json::Value {
    json!({ "report": report, "repair": log })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32, Failure> {
    let (network, property, query) = load_inputs(&args.network, &args.property)?;
    let (outcome, stats) = match args.mode {
        Mode::Exact => run_search::<Rational>(&query, args)?,
        Mode::Float => run_search::<Float>(&query, args)?,
    };
    let json = args.report == Report::Json;
    let tree = match outcome {
        Outcome::Sat { inputs, assignment } => {
            let y: Vec<Rational> = query.outputs.iter().map(|v| assignment[v.0].clone()).collect();
            if json {
                println!(
                    "{}",
                    json!({ "verdict": "sat", "witness": inputs.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                            "output": y.iter().map(|v| v.to_string()).collect::<Vec<_>>(), "nodes": stats.nodes })
                );
            } else {
                println!("SAT");
                println!("witness: {}", join(&inputs));
                println!("output: {}", join(&y));
            }
            return Ok(EXIT_OK);
        }
        Outcome::Unsat { tree } => tree.expect("proofs are produced by default"),
    };
    let mut file = ProofFile {
        tree,
        network: Some(network),
        property: Some(property),
    };
    let mut code = EXIT_OK;
    let mut summary = None;
    if args.check || args.recover {
        let opts = CheckOptions {
            expected: Some(query.clone()),
            jobs: args.jobs.max(1),
        };
        let mut report = check(&file, &opts);
        let mut log = None;
        if !report.accepted && args.recover {
            let (fixed, r, l) = repair(&file, &opts, args.max_iters);
            file = fixed;
            report = r;
            log = Some(l);
        }
        if !report.accepted {
            code = EXIT_REJECT;
        }
        summary = Some((report, log));
    }
    if let Some(path) = &args.proof_out {
        write(path, &proof_format::serialize(&file))?;
    }
    if json {
        println!(
            "{}",
            json!({ "verdict": "unsat", "nodes": stats.nodes, "leaves": stats.leaves,
                    "proof": args.proof_out.as_ref().map(|p| p.display().to_string()),
                    "check": summary.as_ref().map(|(r, l)| check_summary(r, l.as_ref())) })
        );
    } else {
        println!("UNSAT");
        println!("proof tree: {} nodes, {} leaves", stats.nodes, stats.leaves);
        if let Some(path) = &args.proof_out {
            println!("proof written to {}", path.display());
        }
        if let Some((report, log)) = &summary {
            if let Some(log) = log {
                print_repair(log, &query);
            }
            print_check(report);
        }
    }
    Ok(code)
}

fn print_repair(log: &RepairLog, query: &Query<Rational>) {
    println!(
        "recovery: {} leaves patched, {} lemmas weakened, {} dropped",
        log.patched_leaves.len(),
        log.weakened_lemmas.len(),
        log.dropped_lemmas.len()
    );
    for (path, x) in &log.counterexamples {
        let inputs: Vec<Rational> = query.inputs.iter().map(|v| x[v.0].clone()).collect();
        println!("  counterexample at {path}: {}", join(&inputs));
    }
    for (path, why) in &log.inconclusive {
        println!("  inconclusive at {path}: {why}");
    }
}

fn print_check(report: &CheckReport) {
    println!("check: {}", if report.accepted { "ACCEPT" } else { "REJECT" });
    for i in &report.issues {
        println!("  {} [{}]: {}", i.path, i.kind, i.reason);
    }
}

pub fn cmd_check(args: &CheckArgs) -> Result<i32, Failure> {
    let (_, _, query) = load_inputs(&args.network, &args.property)?;
    let text = fs::read(&args.proof).map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", args.proof.display())))?;
    let file = proof_format::deserialize_bytes(&text).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    let opts = CheckOptions {
        expected: Some(query.clone()),
        jobs: args.jobs.max(1),
    };
    let mut report = check(&file, &opts);
    let mut log = None;
    if !report.accepted && args.recover {
        let (fixed, r, l) = repair(&file, &opts, args.max_iters);
        if let Some(path) = &args.repaired_out {
            write(path, &proof_format::serialize(&fixed))?;
        }
        report = r;
        log = Some(l);
    }
    match args.report {
        Report::Json => println!("{}", serde_json::to_string_pretty(&check_summary(&report, log.as_ref())).expect("json")),
        Report::Text => {
            if let Some(log) = &log {
                print_repair(log, &query);
            }
            print_check(&report)
        }
    }
    Ok(if report.accepted { EXIT_OK } else { EXIT_REJECT })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32, Failure> {
    let net = parse_network(&read(&args.network)?).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", args.network.display())))?;
    let x = args
        .input
        .iter()
        .map(|s| Rational::parse(s).map_err(|e| fail(EXIT_INPUT, e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let y = evaluate(&net, &x).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    println!("{}", join(&y));
    Ok(EXIT_OK)
}

pub fn cmd_gen(args: &GenArgs) -> Result<i32, Failure> {
    let cfg = GenConfig {
        inputs: args.inputs.max(1),
        hidden_layers: args.layers,
        width: args.width.max(1),
        outputs: args.outputs.max(1),
        ..GenConfig::default()
    };
    let (net, prop) = instance(args.seed, &cfg);
    let stem = args.out.display().to_string();
    let (np, pp) = (PathBuf::from(format!("{stem}.net")), PathBuf::from(format!("{stem}.prop")));
    write(&np, &(net.to_json() + "\n"))?;
    write(&pp, &(prop.to_json() + "\n"))?;
    println!("{}", np.display());
    println!("{}", pp.display());
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> i32 {
    let r = match &cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Check(a) => cmd_check(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match r {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
