fn main() -> std::process::ExitCode {
    fedlm::cli::main()
}
