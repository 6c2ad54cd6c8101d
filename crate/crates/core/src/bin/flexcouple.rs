fn main() {
    std::process::exit(flexcouple::cli::main());
}
