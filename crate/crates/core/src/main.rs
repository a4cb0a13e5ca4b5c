fn main() {
    std::process::exit(netexit::cli::main_with_args(std::env::args_os()));
}
