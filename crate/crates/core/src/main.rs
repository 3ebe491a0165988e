fn main() {
    std::process::exit(van::cli::main());
}
