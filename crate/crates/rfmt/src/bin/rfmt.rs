fn main() {
    std::process::exit(rfmt::cli::run());
}
