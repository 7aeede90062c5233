fn main() {
    std::process::exit(fedwatt::cli::main_entry());
}
