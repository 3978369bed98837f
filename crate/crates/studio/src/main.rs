fn main() -> std::process::ExitCode {
    nae_studio::cli::main()
}
