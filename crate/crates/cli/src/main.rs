use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xfr_cli::{describe, load_pipeline, CliError, DEFAULT_FMR_TARGETS};

#[derive(Parser)]
#[command(name = "xfr", version, about = "Explainable face verification")]
struct Cli {
    /// TOML config file; XFR_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare two images and write the record and aligned crops.
    Verify {
        image_a: PathBuf,
        image_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute heatmaps, the region table and the QA context for a verified directory.
    Explain { dir: PathBuf },
    /// Ask questions about an explained directory, one per line on stdin.
    Chat { dir: PathBuf },
    /// Fit a PIC model on a `label,score` CSV.
    Calibrate {
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// EER, FNMR at fixed FMRs and the DET curve of a score CSV.
    EvalFr {
        scores: PathBuf,
        /// Comma-separated FMR targets.
        #[arg(long, value_delimiter = ',')]
        fmr: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a question suite against explained directories.
    EvalQa {
        suite: PathBuf,
        #[arg(required = true)]
        sessions: Vec<PathBuf>,
        /// Only ask each entry's canonical phrasing.
        #[arg(long)]
        canonical_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP API.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Verify { image_a, image_b, out } => {
            let (_, p) = load_pipeline(config)?;
            let r = xfr_cli::verify(&p, &image_a, &image_b, &out)?;
            println!("{}  score {:.4}  threshold {:.3}  confidence {:.1}%", r.decision, r.score, r.threshold, r.pic * 100.0);
            println!("wrote {}", out.display());
        }
        Command::Explain { dir } => {
            let (_, p) = load_pipeline(config)?;
            let e = xfr_cli::explain(&p, &dir)?;
            print!("{}", e.table.to_csv());
            println!("wrote {}", dir.display());
        }
        Command::Chat { dir } => {
            let (_, p) = load_pipeline(config)?;
            eprintln!("ask a question per line; end input or type quit to stop");
            xfr_cli::chat(&p, &dir, std::io::stdin().lock(), std::io::stdout().lock())?;
        }
        Command::Calibrate { scores, out } => {
            let m = xfr_cli::calibrate(&scores, &out)?;
            let meta = m.meta();
            println!(
                "fitted on {} genuine and {} impostor scores; PIC(0.45) = {:.4}",
                meta.n_genuine,
                meta.n_impostor,
                m.pic(0.45)
            );
            println!("wrote {}", out.display());
        }
        Command::EvalFr { scores, fmr, out } => {
            let targets = if fmr.is_empty() { DEFAULT_FMR_TARGETS.to_vec() } else { fmr };
            let r = xfr_cli::eval_fr(&scores, &targets, out.as_deref())?;
            print!("{}", r.to_json());
        }
        Command::EvalQa {
            suite,
            sessions,
            canonical_only,
            out,
        } => {
            let (_, p) = load_pipeline(config)?;
            let r = xfr_cli::eval_qa(&p, &suite, &sessions, canonical_only, out.as_deref())?;
            print!("{}", r.to_text());
        }
        Command::Serve { listen } => {
            let (cfg, p) = load_pipeline(config)?;
            let addr = listen.unwrap_or_else(|| cfg.listen.clone());
            let info = describe(&p.info());
            let state = xfr_service::AppState::new(p, cfg.ttl_s);
            let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
                path: PathBuf::from("<runtime>"),
                source,
            })?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|source| CliError::Io {
                    path: PathBuf::from(&addr),
                    source,
                })?;
                eprintln!("listening on http://{} ({info})", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr.clone()));
                xfr_service::serve(listener, state).await.map_err(|source| CliError::Io {
                    path: PathBuf::from(&addr),
                    source,
                })
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
