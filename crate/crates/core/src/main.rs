fn main() {
    std::process::exit(diastereo::cli::run(std::env::args_os()));
}
