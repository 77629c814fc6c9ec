use std::io::{self, IsTerminal};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use scoretalk_cli::{apply, convert, load, CliError, Repl};
use scoretalk_core::session::Session;
use scoretalk_service::AppState;

#[derive(Parser)]
#[command(name = "scoretalk", version, about = "Edit symbolic music by typing commands")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Interactive session. Type commands after `U:`; `show`, `undo`,
    /// `save <path>`, `load <path>` and `quit` are also understood.
    Repl {
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Apply commands in order and write the result (.json or .mid).
    Apply {
        #[arg(long)]
        file: PathBuf,
        #[arg(long = "command")]
        commands: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read .mid/.musicxml/.json and write .json or .mid.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service. SCORETALK_PORT and SCORETALK_HOST, when set,
    /// take precedence over the flags.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Minutes of inactivity before a session is dropped.
        #[arg(long, default_value_t = 60)]
        idle_minutes: u64,
    },
}

fn serve(host: String, port: u16, idle_minutes: u64) -> Result<(), CliError> {
    let host = std::env::var("SCORETALK_HOST").unwrap_or(host);
    let port = match std::env::var("SCORETALK_PORT") {
        Ok(p) => p
            .parse()
            .map_err(|_| CliError::Usage(format!("SCORETALK_PORT is not a port number: {p:?}")))?,
        Err(_) => port,
    };
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|_| CliError::Usage(format!("bad address {host}:{port}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(e.to_string()))?;
    runtime
        .block_on(async {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            tracing::info!(%addr, "listening");
            eprintln!("listening on http://{addr}");
            let state = AppState::new(Duration::from_secs(idle_minutes * 60));
            scoretalk_service::serve(listener, state).await
        })
        .map_err(|e| CliError::Usage(format!("server: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut stderr = io::stderr();
    match cli.command {
        Cmd::Repl { file } => {
            let session = match file {
                Some(path) => {
                    let (music, meta) = load(&path, &mut stderr)?;
                    Some(Session::new(music, meta))
                }
                None => None,
            };
            let echo = !io::stdin().is_terminal();
            let mut repl = Repl::new(session, io::stdout().lock(), echo);
            repl.run(io::stdin().lock()).map_err(|e| CliError::Usage(e.to_string()))
        }
        Cmd::Apply { file, commands, out } => apply(&file, &commands, &out, &mut stderr).map(|_| ()),
        Cmd::Convert { input, out } => convert(&input, &out, &mut stderr),
        Cmd::Serve { port, host, idle_minutes } => serve(host, port, idle_minutes),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
