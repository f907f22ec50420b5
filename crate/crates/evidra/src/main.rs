use std::process::ExitCode;

fn main() -> ExitCode {
    match evidra::run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evidra: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
