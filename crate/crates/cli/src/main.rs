fn main() {
    std::process::exit(centerpose_cli::run(std::env::args_os()));
}
