fn main() {
    std::process::exit(fluoroseg::cli::run(std::env::args_os()));
}
