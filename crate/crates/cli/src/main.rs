fn main() {
    std::process::exit(pani_cli::run(std::env::args_os()));
}
