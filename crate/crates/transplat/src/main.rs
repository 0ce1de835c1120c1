fn main() {
    std::process::exit(transplat::cli::run());
}
