fn main() {
    std::process::exit(morphdict::cli::run(std::env::args_os()));
}
