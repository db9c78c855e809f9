fn main() -> std::process::ExitCode {
    roomdqn::cli::main()
}
