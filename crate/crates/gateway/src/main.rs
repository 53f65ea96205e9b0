use std::io::Write;

use clap::Parser;
use pdv_gateway::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(serde_json::Value::Null) => {}
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out).expect("JSON prints");
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.code(), "message": e.to_string()}));
            std::process::exit(e.exit_code());
        }
    }
}
