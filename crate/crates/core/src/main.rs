fn main() {
    std::process::exit(slimlm::cli::main());
}
