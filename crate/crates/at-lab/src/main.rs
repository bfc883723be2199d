fn main() {
    std::process::exit(at_lab::cli::run());
}
