fn main() {
    std::process::exit(plaplab::cli::main_with_args(std::env::args_os()));
}
