fn main() {
    std::process::exit(omvsl::cli::run());
}
