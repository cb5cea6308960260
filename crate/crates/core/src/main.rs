fn main() {
    std::process::exit(promobench::cli::main_with_args(std::env::args_os()));
}
