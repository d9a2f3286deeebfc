fn main() {
    std::process::exit(truncsa::cli::main_with(std::env::args_os()));
}
