fn main() {
    std::process::exit(skelpaint_cli::main_with_args(std::env::args_os()));
}
