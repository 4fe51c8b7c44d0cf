fn main() {
    std::process::exit(ssse::cli::main_with_args(std::env::args_os()));
}
