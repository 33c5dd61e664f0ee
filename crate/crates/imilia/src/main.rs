use clap::Parser;
use imilia::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        // One machine-parsable error line on stderr.
        let body = serde_json::json!({"level": "error", "message": err.to_string()});
        eprintln!("{body}");
        std::process::exit(1);
    }
}
