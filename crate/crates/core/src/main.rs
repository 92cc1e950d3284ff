fn main() {
    std::process::exit(mixfx::cli::main_with_args(std::env::args_os()));
}
