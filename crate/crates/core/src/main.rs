fn main() {
    std::process::exit(levy_scheme::cli::main_with_args(std::env::args_os()));
}
