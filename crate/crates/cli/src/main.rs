fn main() -> std::process::ExitCode {
    qsg_cli::main_with_args(std::env::args_os())
}
