fn main() {
    std::process::exit(momflight::cli::main_with_args(std::env::args_os()));
}
