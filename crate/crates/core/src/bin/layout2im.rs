fn main() -> std::process::ExitCode {
    layout2im::cli::main()
}
