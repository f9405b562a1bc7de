fn main() {
    std::process::exit(gtsparse::cli::run(std::env::args_os()));
}
