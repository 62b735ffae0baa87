fn main() -> std::process::ExitCode {
    dip_core::cli::main()
}
