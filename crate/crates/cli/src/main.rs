use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use prft_core::harness::config::{load_config, ConfigErrors, Scenario};
use prft_core::harness::metrics::complexity_sweep;
use prft_core::harness::report::{emit_report, sweep_table, Format};
use prft_core::harness::robustness::check_robustness;
use prft_core::harness::suite::{run_suite_with, Bundle};
use prft_core::trace::RunTrace;

const OUT_ENV: &str = "PRFT_OUT";

#[derive(Parser)]
#[command(name = "prft", version, about = "Rational-consensus protocol simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or every *.toml in a directory.
    Run {
        path: PathBuf,
        /// Output directory; defaults to $PRFT_OUT, then ./prft-out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Do not write per-run traces.
        #[arg(long)]
        no_traces: bool,
    },
    /// Check the robustness clauses of a stored trace.
    Check {
        trace: PathBuf,
        /// Blocks truncated before the common-prefix comparison.
        #[arg(long, default_value_t = 0)]
        c: usize,
        /// Censorship horizon in full leader rotations.
        #[arg(long, default_value_t = 3)]
        cr_window: usize,
    },
    /// Honest-run complexity sweep over n.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "5,9,13,17")]
        n: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Param::Messages)]
        param: Param,
        #[arg(long, default_value_t = 8)]
        rounds: u64,
        #[arg(long, default_value_t = 2)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a stored bundle.
    Report {
        bundle: PathBuf,
        #[arg(long, default_value = "table")]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Messages,
    Bytes,
}

enum Failure {
    Violation,
    Config(String),
}

impl From<ConfigErrors> for Failure {
    fn from(e: ConfigErrors) -> Self {
        Failure::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { path, out, no_traces } => run(&path, out, no_traces),
        Cmd::Check { trace, c, cr_window } => check(&trace, c, cr_window),
        Cmd::Sweep { n, param, rounds, seeds, out } => sweep(&n, param, rounds, seeds, out),
        Cmd::Report { bundle, format } => report(&bundle, format),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("prft-out"))
}

fn load_scenarios(path: &Path) -> Result<Vec<Scenario>, Failure> {
    if !path.is_dir() {
        return Ok(vec![load_config(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for f in &files {
        match load_config(f) {
            Ok(s) => out.push(s),
            Err(e) => errors.push(format!("{}: {e}", f.display())),
        }
    }
    if !errors.is_empty() {
        return Err(Failure::Config(errors.join("\n")));
    }
    Ok(out)
}

fn run(path: &Path, out: Option<PathBuf>, no_traces: bool) -> Result<(), Failure> {
    let scenarios = load_scenarios(path)?;
    let out = out_dir(out);
    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;

    let write_trace = |sc: &Scenario, t: &RunTrace| {
        if no_traces {
            return;
        }
        let p = traces.join(format!("{}-seed{}.jsonl", sc.name(), t.header.seed));
        if let Err(e) = fs::File::create(&p).and_then(|f| t.write_jsonl(std::io::BufWriter::new(f))) {
            eprintln!("warning: cannot write {}: {e}", p.display());
        }
    };
    let bundle = match run_suite_with(&scenarios, write_trace) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(Failure::Violation);
        }
    };

    let bundle_path = out.join("bundle.json");
    let json = serde_json::to_string_pretty(&bundle).expect("bundle serializes");
    fs::write(&bundle_path, json).map_err(io_err(&bundle_path))?;
    let records = out.join("records.jsonl");
    fs::write(&records, emit_report(&bundle, Format::Records)).map_err(io_err(&records))?;
    print!("{}", emit_report(&bundle, Format::Table));
    println!("\nwrote {}", out.display());
    if bundle.all_safe() {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}

fn check(path: &Path, c: usize, cr_window: usize) -> Result<(), Failure> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let trace = RunTrace::read_jsonl(BufReader::new(file)).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let rep = check_robustness(&trace, c, cr_window);
    println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes"));
    if rep.all_pass() {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}

fn sweep(ns: &[usize], param: Param, rounds: u64, seeds: u64, out: Option<PathBuf>) -> Result<(), Failure> {
    if ns.len() < 2 || ns.iter().any(|&n| n == 0) {
        return Err(Failure::Config("sweep needs at least two positive values of n".into()));
    }
    let seeds: Vec<u64> = (0..seeds.max(1)).collect();
    let sw = complexity_sweep(ns, rounds, &seeds).map_err(|e| {
        eprintln!("error: {e}");
        Failure::Violation
    })?;
    print!("{}", sweep_table(&sw));
    let slope = match param {
        Param::Messages => sw.message_slope,
        Param::Bytes => sw.byte_slope,
    };
    if let Some(s) = slope {
        let name = match param {
            Param::Messages => "messages",
            Param::Bytes => "bytes",
        };
        println!("{name} slope: {s:.3}");
    }
    let out = out_dir(out);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let path = out.join("sweep.json");
    fs::write(&path, serde_json::to_string_pretty(&sw).expect("sweep serializes")).map_err(io_err(&path))?;
    Ok(())
}

fn report(path: &Path, format: Format) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bundle: Bundle = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    print!("{}", emit_report(&bundle, format));
    Ok(())
}
