fn main() {
    std::process::exit(glidepath::cli::main_with(std::env::args_os()));
}
