use clap::Parser;
use snls_cli::{requested_out, run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(manifest) => println!("{}", manifest.display()),
        Err(e) => {
            let body = serde_json::to_string_pretty(&e.to_json()).unwrap_or_default();
            eprintln!("{body}");
            if let Some(dir) = requested_out(&cli.command) {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), &body);
                }
            }
            std::process::exit(e.exit_code());
        }
    }
}
