use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(ipc_auth_sim::cli::cli_main(std::env::args_os()) as u8)
}
