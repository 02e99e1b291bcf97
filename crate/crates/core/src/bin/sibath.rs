fn main() {
    std::process::exit(sibath::cli::main_with(std::env::args_os()));
}
