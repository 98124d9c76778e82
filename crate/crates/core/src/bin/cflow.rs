fn main() {
    std::process::exit(cflow::cli::main_with_args(std::env::args_os()));
}
