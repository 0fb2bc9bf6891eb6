fn main() -> std::process::ExitCode {
    ifsem::cli::main()
}
