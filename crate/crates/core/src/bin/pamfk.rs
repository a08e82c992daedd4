fn main() {
    std::process::exit(pamfk::cli::main_with_args(std::env::args_os()));
}
