fn main() -> std::process::ExitCode {
    oodkit::cli::main()
}
