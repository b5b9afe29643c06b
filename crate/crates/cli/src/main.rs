//! `prefctl`: run preference-feedback experiments, re-check result
//! directories and serve live sessions.
//!
//! Exit codes: 0 success, 1 a check failed (or a replica did), 2 configuration error.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prefctl_core::analysis::{CheckStatus, VerificationReport};
use prefctl_core::harness::{builtin, builtin_configs, run_experiment, verify_result_dir, Check, ExperimentConfig};
use prefctl_core::Error;
use prefctl_service::ServiceConfig;

#[derive(Debug, Parser)]
#[command(name = "prefctl", version, about = "Preference-feedback optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a config file or a builtin study and write its result directory.
    Run {
        /// Path to a JSON config, or a builtin name.
        target: String,
        /// Base seed; replica i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Output root; results go to <out>/<name>.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Re-run checks on a result directory.
    Verify {
        dir: PathBuf,
        /// 1-5 or theorem1; repeatable. Defaults to the checks in the stored config.
        #[arg(long = "lemma")]
        lemma: Vec<String>,
    },
    /// Serve live sessions over HTTP and WebSocket.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Unfinished sessions allowed at once.
        #[arg(long, default_value_t = 64)]
        capacity: usize,
        /// Write finished sessions here in the trajectory CSV format.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Print the builtin study names.
    ListBuiltins,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::UnknownBuiltin { .. }
        | Error::DimensionMismatch { .. }
        | Error::InvalidParameter { .. }
        | Error::OutOfRange { .. }
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

fn load_target(target: &str) -> Result<(ExperimentConfig, Option<PathBuf>), Error> {
    let path = Path::new(target);
    if path.is_file() {
        let base = path.parent().map(Path::to_path_buf);
        return Ok((ExperimentConfig::load(path)?, base));
    }
    if target.ends_with(".json") || target.contains(std::path::MAIN_SEPARATOR) {
        return Err(Error::config(target, "no such config file"));
    }
    Ok((builtin(target)?, None))
}

fn print_report(link: &str, rep: &VerificationReport) {
    let status = |s: CheckStatus| serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from));
    let mut line = format!(
        "{link:<10} {:<9} {:<8}",
        rep.lemma,
        status(rep.status).unwrap_or_default()
    );
    if let Some(w) = rep.worst_margin() {
        line += &format!(" worst margin {:.4e} at k = {}", w.margin, w.k);
    }
    if let Some(alt) = rep.alternate_status {
        line += &format!(" (measured: {})", status(alt).unwrap_or_default());
    }
    if rep.status == CheckStatus::Vacuous {
        if let Some(n) = rep.notes.first() {
            line += &format!(" [{n}]");
        }
    }
    println!("{line}");
}

fn outcome<'a>(reports: impl IntoIterator<Item = &'a VerificationReport>) -> ExitCode {
    if reports.into_iter().any(|r| r.status.is_failure()) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_run(target: &str, seed: Option<u64>, replicas: Option<usize>, out: &Path) -> ExitCode {
    let (mut config, base) = match load_target(target) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(s) = seed {
        config.oracle.seed = s;
    }
    if let Some(r) = replicas {
        config.replicas = r;
    }
    match run_experiment(&config, base.as_deref(), out) {
        Ok(res) => {
            println!("wrote {}", res.dir.display());
            for l in &res.links {
                for rep in &l.reports {
                    print_report(l.link.name(), rep);
                }
            }
            outcome(res.links.iter().flat_map(|l| &l.reports))
        }
        Err(e) => fail(&e),
    }
}

fn cmd_verify(dir: &Path, lemma: &[String]) -> ExitCode {
    let checks: Result<Vec<Check>, Error> = lemma.iter().map(|s| s.parse()).collect();
    let checks = match checks {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let selected = (!checks.is_empty()).then_some(checks.as_slice());
    match verify_result_dir(dir, selected) {
        Ok(reports) => {
            for (link, rep) in &reports {
                print_report(link.name(), rep);
            }
            outcome(reports.iter().map(|(_, r)| r))
        }
        Err(e) => fail(&e),
    }
}

fn cmd_serve(host: &str, port: u16, capacity: usize, export: Option<PathBuf>) -> ExitCode {
    let addr: SocketAddr = match format!("{host}:{port}").parse() {
        Ok(a) => a,
        Err(e) => return fail(&Error::config("host", e.to_string())),
    };
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(&Error::Io(e)),
    };
    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        prefctl_service::serve(
            listener,
            ServiceConfig {
                capacity,
                export_dir: export,
            },
        )
        .await
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&Error::Io(e)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            target,
            seed,
            replicas,
            out,
        } => cmd_run(&target, seed, replicas, &out),
        Command::Verify { dir, lemma } => cmd_verify(&dir, &lemma),
        Command::Serve {
            port,
            host,
            capacity,
            export,
        } => cmd_serve(&host, port, capacity, export),
        Command::ListBuiltins => {
            for c in builtin_configs() {
                println!("{:<20} {}", c.name, c.description.unwrap_or_default());
            }
            ExitCode::SUCCESS
        }
    }
}
