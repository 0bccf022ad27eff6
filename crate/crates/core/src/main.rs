fn main() {
    std::process::exit(gsp_reserve::cli::main());
}
