fn main() {
    std::process::exit(kornlab::cli::run(std::env::args_os()));
}
