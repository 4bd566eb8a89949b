use clap::Parser;

use sched_gate::cli::{resolve_config_path, run_check_config, run_mint_token, run_serve, Cli, Command};

fn fail(message: String) -> ! {
    eprintln!("sched-gate: {message}");
    std::process::exit(1);
}

#[tokio::main]
async fn main() {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_max_level(tracing::Level::INFO)
        .with_target(false)
        .init();

    match cli.command {
        Command::Serve { config } => {
            let path = resolve_config_path(config).unwrap_or_else(|e| fail(e));
            if let Err(e) = run_serve(&path).await {
                fail(e);
            }
        }
        Command::MintToken { user, validity } => match run_mint_token(&user, validity) {
            Ok(token) => println!("{token}"),
            Err(e) => fail(e),
        },
        Command::CheckConfig { config } => {
            let path = resolve_config_path(config).unwrap_or_else(|e| fail(e));
            match run_check_config(&path) {
                Ok(report) => print!("{report}"),
                Err(e) => fail(e),
            }
        }
    }
}
