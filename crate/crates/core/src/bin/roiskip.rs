fn main() {
    std::process::exit(roiskip::cli::main_with_args(std::env::args_os()));
}
