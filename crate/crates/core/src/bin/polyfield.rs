fn main() {
    std::process::exit(polyfield::cli::run(std::env::args_os()));
}
