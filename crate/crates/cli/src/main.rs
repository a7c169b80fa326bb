fn main() {
    std::process::exit(heavytail_cli::run(std::env::args_os()));
}
