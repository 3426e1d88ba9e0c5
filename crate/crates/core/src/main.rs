fn main() {
    std::process::exit(jumprev::cli::run());
}
