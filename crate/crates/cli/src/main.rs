fn main() -> std::process::ExitCode {
    qcnn_cli::main_with_args(std::env::args_os())
}
