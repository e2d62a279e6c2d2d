fn main() -> std::process::ExitCode {
    simulstream::cli::run()
}
