fn main() {
    std::process::exit(autoresearch::cli::main_with(std::env::args_os()));
}
