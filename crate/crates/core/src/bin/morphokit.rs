fn main() {
    std::process::exit(morphokit::cli::main())
}
