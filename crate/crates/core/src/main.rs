fn main() {
    std::process::exit(lgdn::cli::main_with(std::env::args_os()));
}
