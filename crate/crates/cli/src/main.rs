fn main() {
    std::process::exit(confies_cli::run(std::env::args_os()));
}
