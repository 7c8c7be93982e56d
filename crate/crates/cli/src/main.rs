use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use tracewit::infer::Exhausted;
use tracewit::oracle::check_evidence;
use tracewit::report::Sources;
use tracewit::{
    infer_witness, parse_apis, parse_program, parse_sre, parse_spec, validate_witness, Alphabet,
    Assignment, Budgets, OracleConfig, Scope, Sfa, Sort, Trace, Universe, Validation, Var,
    WitnessReport,
};

/// Outcome of a subcommand: 0 witness/true, 1 none/false, 2 usage error.
enum Status {
    Yes,
    No,
}

type Run = Result<Status, String>;

#[derive(Parser)]
#[command(name = "tracewit", version, about = "Incorrectness witnesses for effectful programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Infer and validate a witness that PROGRAM can realize SPEC.
    Check(CheckArgs),
    /// Decide whether a regex accepts a concrete trace under a binding.
    Member(MemberArgs),
    /// Re-check a report produced by `check`.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct OracleFlags {
    /// Address domain size for search and validation.
    #[arg(long, default_value_t = 4)]
    domain: u32,
    /// Longest concrete prefix tried during validation.
    #[arg(long = "max-prefix", default_value_t = 6)]
    max_prefix: usize,
}

#[derive(Args)]
struct CheckArgs {
    spec: PathBuf,
    program: PathBuf,
    apis: PathBuf,
    #[command(flatten)]
    oracle: OracleFlags,
    #[arg(long = "max-hypotheses", default_value_t = 16)]
    max_hypotheses: usize,
    #[arg(long = "max-branches", default_value_t = 10_000)]
    max_branches: usize,
    /// Wall-clock budget for inference, in seconds.
    #[arg(long, default_value_t = 10.0)]
    timeout: f64,
    /// Write Graphviz renderings of the spec and chosen split here.
    #[arg(long = "emit-sfa")]
    emit_sfa: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MemberArgs {
    #[arg(long)]
    sre: String,
    /// Events separated by `;`; empty for the empty trace.
    #[arg(long, default_value = "")]
    trace: String,
    /// Comma-separated `name=value` pairs.
    #[arg(long, default_value = "")]
    bind: String,
    /// API file defining the alphabet; defaults to put/get.
    #[arg(long)]
    apis: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    domain: Option<u32>,
    #[arg(long = "max-prefix")]
    max_prefix: Option<usize>,
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn in_file<T>(path: &Path, r: tracewit::Result<T>) -> Result<T, String> {
    r.map_err(|e| format!("{}: {e}", path.display()))
}

fn check(a: CheckArgs) -> Run {
    let (spec_text, prog_text, api_text) = (read(&a.spec)?, read(&a.program)?, read(&a.apis)?);
    let apis = in_file(&a.apis, parse_apis(&api_text))?;
    let program = in_file(&a.program, parse_program(&prog_text, &apis))?;
    let spec = in_file(&a.spec, parse_spec(&spec_text, &apis))?;
    let timeout = Duration::try_from_secs_f64(a.timeout).ok().filter(|t| !t.is_zero());
    let (Some(timeout), true) = (timeout, a.oracle.domain > 0 && a.oracle.max_prefix > 0) else {
        return Err("--domain, --max-prefix and --timeout must be positive".into());
    };
    let budgets = Budgets {
        max_hypotheses: a.max_hypotheses,
        max_branches: a.max_branches,
        timeout,
    };
    let cfg = OracleConfig {
        domain_size: a.oracle.domain,
        max_prefix_len: a.oracle.max_prefix,
        ..OracleConfig::default()
    };
    let universe = Universe::new(apis.alphabet().clone(), cfg.domain_size);

    let out = infer_witness(&program, &apis, &spec, budgets, &universe).map_err(|e| e.to_string())?;
    if let Some(dir) = &a.emit_sfa {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let mut graphs = vec![("spec".to_string(), Sfa::compile(&spec.pattern))];
        if let Some(s) = &out.success {
            graphs.push(("prefix".into(), Sfa::compile(&s.hypothesis.prefix)));
            graphs.push(("suffix".into(), Sfa::compile(&s.hypothesis.suffix)));
        }
        for (name, sfa) in graphs {
            let path = dir.join(format!("{name}.dot"));
            fs::write(&path, sfa.to_dot(&name)).map_err(|e| format!("{}: {e}", path.display()))?;
        }
    }
    let Some(success) = out.success else {
        let why = match out.exhausted {
            Some(Exhausted::Hypotheses) => "hypothesis budget exhausted",
            Some(Exhausted::Branches) => "branch budget exhausted",
            Some(Exhausted::Time) => "timeout",
            None => "search space exhausted",
        };
        eprintln!(
            "no witness for `{}` against `{}` ({why}; {} hypotheses, {} branches)",
            program.name, spec.name, out.stats.hypotheses_tried, out.stats.branches
        );
        return Ok(Status::No);
    };

    let h = &success.hypothesis;
    let started = Instant::now();
    let v = validate_witness(&success.judgment, &program, apis.alphabet(), &h.prefix, &h.suffix, &cfg)
        .map_err(|e| e.to_string())?;
    let validate_us = started.elapsed().as_micros() as u64;
    let Validation::Validated(ev) = &v else {
        eprintln!("inferred judgment for `{}` was not confirmed by replay: {v:?}", program.name);
        return Ok(Status::No);
    };
    let sources = Sources {
        program: prog_text,
        spec: spec_text,
        apis: api_text,
    };
    let report = WitnessReport::new(
        &program, &spec, sources, &success, Some(ev), &budgets, &cfg, &out.stats, validate_us,
    );
    let json = report.to_json();
    match &a.out {
        Some(path) => fs::write(path, json).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(Status::Yes)
}

fn parse_bind(text: &str) -> Result<(Vec<Var>, Assignment), String> {
    let mut vars = Vec::new();
    let mut asg = Assignment::new();
    for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| format!("binding `{pair}` is not name=value"))?;
        let value: u32 = value
            .trim()
            .parse()
            .map_err(|_| format!("binding `{pair}` needs a non-negative integer"))?;
        let v = Var::new(name.trim(), Sort::Addr);
        if vars.contains(&v) {
            return Err(format!("`{}` bound twice", v.name()));
        }
        asg.insert(v.clone(), value);
        vars.push(v);
    }
    Ok((vars, asg))
}

fn member(a: MemberArgs) -> Run {
    let alphabet = match &a.apis {
        Some(path) => in_file(path, parse_apis(&read(path)?))?.alphabet().clone(),
        None => Alphabet::key_value(),
    };
    let (vars, asg) = parse_bind(&a.bind)?;
    let r = parse_sre(&a.sre, &Scope::new(&alphabet, &vars)).map_err(|e| format!("--sre: {e}"))?;
    let trace = Trace::parse(&a.trace, &alphabet).map_err(|e| format!("--trace: {e}"))?;
    let yes = r.accepts(trace.events(), &asg).map_err(|e| e.to_string())?;
    println!("{yes}");
    Ok(if yes { Status::Yes } else { Status::No })
}

fn validate(a: ValidateArgs) -> Run {
    let report = WitnessReport::from_json(&read(&a.report)?).map_err(|e| e.to_string())?;
    // A well-formed document whose claims no longer parse is a refutation,
    // not a usage error.
    let loaded = match report.load() {
        Ok(l) => l,
        Err(e) => {
            eprintln!("report does not reconstruct: {e}");
            return Ok(Status::No);
        }
    };
    let cfg = OracleConfig {
        domain_size: a.domain.unwrap_or(report.budgets.domain),
        max_prefix_len: a.max_prefix.unwrap_or(report.budgets.max_prefix),
        ..OracleConfig::default()
    };
    if cfg.domain_size == 0 || cfg.max_prefix_len == 0 {
        return Err("--domain and --max-prefix must be positive".into());
    }
    let (j, p) = (&loaded.judgment, &loaded.program);
    let recorded = match &loaded.evidence {
        Some(ev) => check_evidence(j, p, &loaded.prefix, &loaded.suffix, ev).unwrap_or(false),
        None => false,
    };
    if !recorded {
        eprintln!("recorded evidence missing or does not replay");
        return Ok(Status::No);
    }
    let v = validate_witness(j, p, loaded.apis.alphabet(), &loaded.prefix, &loaded.suffix, &cfg);
    match v {
        Ok(Validation::Validated(ev)) => {
            println!("validated: prefix {} produces {}", ev.prefix, ev.produced);
            Ok(Status::Yes)
        }
        Ok(other) => {
            eprintln!("judgment not reproduced: {other:?}");
            Ok(Status::No)
        }
        Err(e) => {
            eprintln!("judgment not reproduced: {e}");
            Ok(Status::No)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = match cli.cmd {
        Cmd::Check(a) => check(a),
        Cmd::Member(a) => member(a),
        Cmd::Validate(a) => validate(a),
    };
    match run {
        Ok(Status::Yes) => ExitCode::from(0),
        Ok(Status::No) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
