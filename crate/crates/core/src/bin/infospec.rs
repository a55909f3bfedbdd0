fn main() -> std::process::ExitCode {
    infospec::cli::main()
}
