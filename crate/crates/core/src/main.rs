fn main() {
    std::process::exit(emv::cli::run(std::env::args_os()));
}
