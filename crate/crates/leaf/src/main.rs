use clap::Parser;

fn main() {
    let cli = leaf::cli::Cli::parse();
    match leaf::cli::run(cli) {
        Ok(out) => {
            if !out.is_empty() {
                print!("{out}");
            }
        }
        Err(e) => {
            let body = serde_json::json!({
                "kind": e.kind(),
                "message": e.to_string(),
            });
            eprintln!("{body}");
            std::process::exit(1);
        }
    }
}
