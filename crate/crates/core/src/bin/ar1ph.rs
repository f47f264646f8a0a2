fn main() {
    std::process::exit(ar1ph::cli::run(std::env::args_os()));
}
