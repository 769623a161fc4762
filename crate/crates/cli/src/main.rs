use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use contraq::{list_scenarios, load_bundled, resolve_scenario, run, CliError, RunOptions, RunReport};

#[derive(Parser)]
#[command(name = "contraq", version, about = "Run constrained contraction-analysis scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or a bundled scenario by name), or every bundled scenario.
    Run {
        #[arg(required_unless_present = "all", conflicts_with = "all")]
        scenario: Option<String>,
        #[arg(long)]
        all: bool,
        /// Output directory [default: $CONTRAQ_OUT or ./out]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the integration step
        #[arg(long)]
        dt: Option<f64>,
        /// Seed for randomly drawn perturbation directions
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List bundled scenarios.
    List,
    /// Print contraction bounds of a scenario as JSON.
    Bounds {
        scenario: String,
        #[arg(long)]
        dt: Option<f64>,
    },
}

fn out_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.or_else(|| std::env::var_os("CONTRAQ_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn print_report(r: &RunReport) {
    let status = if r.passed() { "PASS" } else { "FAIL" };
    println!("{status} {} ({:.2} s)", r.scenario, r.elapsed.as_secs_f64());
    if let Some(e) = &r.error {
        println!("  error: {e}");
    }
    for c in &r.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        println!("  {mark} {}: {}", c.name, c.detail);
    }
    for p in &r.outputs {
        println!("  wrote {}", p.display());
    }
}

fn fail(e: &CliError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::List => {
            for name in list_scenarios() {
                println!("{name}");
            }
            0
        }
        Command::Run {
            scenario,
            all,
            out,
            dt,
            seed,
        } => {
            let dir = out_dir(out);
            let opts = RunOptions { dt, seed };
            if all {
                let names = list_scenarios();
                let results: Vec<_> = std::thread::scope(|scope| {
                    let handles: Vec<_> = names
                        .iter()
                        .map(|name| {
                            let dir = &dir;
                            scope.spawn(move || load_bundled(name).and_then(|s| run(&s, dir, &opts)))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("runner thread")).collect()
                });
                results
                    .iter()
                    .map(|r| match r {
                        Ok(report) => {
                            print_report(report);
                            report.exit_code()
                        }
                        Err(e) => fail(e),
                    })
                    .max()
                    .unwrap_or(0)
            } else {
                let name = scenario.expect("clap requires a scenario");
                match resolve_scenario(&name).and_then(|s| run(&s, &dir, &opts)) {
                    Ok(report) => {
                        print_report(&report);
                        report.exit_code()
                    }
                    Err(e) => fail(&e),
                }
            }
        }
        Command::Bounds { scenario, dt } => match resolve_scenario(&scenario) {
            Ok(s) => match contraq::runner::bounds_only(&s, &RunOptions { dt, seed: None }) {
                Ok(v) => {
                    print!("{}", contraq::output::json(&v));
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    2
                }
            },
            Err(e) => fail(&e),
        },
    };
    ExitCode::from(code as u8)
}
