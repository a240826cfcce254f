fn main() -> std::process::ExitCode {
    pconj_cli::cli::main()
}
