fn main() {
    std::process::exit(htsr::cli::main_with_args(std::env::args_os()));
}
