fn main() {
    std::process::exit(geomem::cli::main());
}
