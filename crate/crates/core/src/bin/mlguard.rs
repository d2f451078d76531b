fn main() {
    std::process::exit(mlguard::cli::run_cli(std::env::args_os()));
}
