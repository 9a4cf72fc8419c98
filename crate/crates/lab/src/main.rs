fn main() {
    std::process::exit(aesim::cli::run(std::env::args_os()));
}
