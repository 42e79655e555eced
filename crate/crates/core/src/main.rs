fn main() {
    std::process::exit(harmflow::cli::main_with_args(std::env::args_os()));
}
