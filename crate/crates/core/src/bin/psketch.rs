fn main() {
    std::process::exit(precision_sketch::cli::run(std::env::args_os()));
}
