fn main() {
    std::process::exit(nof1_core::cli::run(std::env::args_os()));
}
