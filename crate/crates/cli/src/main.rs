use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let env_dir = std::env::var_os("GQKD_OUTPUT_DIR").map(PathBuf::from);
    match gqkd_cli::run(&args, env_dir.as_deref()) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
