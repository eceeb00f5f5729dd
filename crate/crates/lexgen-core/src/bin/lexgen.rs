fn main() {
    std::process::exit(lexgen_core::cli::run());
}
