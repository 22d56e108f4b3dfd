fn main() {
    std::process::exit(periloom_cli::run(std::env::args_os()));
}
