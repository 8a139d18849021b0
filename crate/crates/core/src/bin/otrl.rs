fn main() {
    std::process::exit(otrl::cli::run(std::env::args_os()));
}
