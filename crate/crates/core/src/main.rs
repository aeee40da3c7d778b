fn main() {
    std::process::exit(tsmixer::cli::main());
}
