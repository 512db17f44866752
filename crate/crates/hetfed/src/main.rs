fn main() {
    std::process::exit(hetfed::cli::main_impl(std::env::args_os()));
}
