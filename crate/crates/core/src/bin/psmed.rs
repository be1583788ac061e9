fn main() {
    std::process::exit(psmed::cli::main());
}
