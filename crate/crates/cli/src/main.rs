fn main() {
    std::process::exit(mfglab::cli::main_with_args(std::env::args_os()));
}
