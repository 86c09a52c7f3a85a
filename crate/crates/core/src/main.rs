fn main() {
    std::process::exit(perisolve::cli::run());
}
