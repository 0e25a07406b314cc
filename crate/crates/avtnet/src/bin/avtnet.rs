fn main() {
    std::process::exit(avtnet::cli::main_with_exit());
}
