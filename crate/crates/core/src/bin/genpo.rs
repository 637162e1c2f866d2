fn main() -> std::process::ExitCode {
    genpo::cli::main()
}
