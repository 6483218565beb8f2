fn main() {
    std::process::exit(floc_cli::main_entry());
}
