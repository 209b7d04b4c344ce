fn main() {
    std::process::exit(loopgibbs::cli::main_with_args(std::env::args_os()));
}
