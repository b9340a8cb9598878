fn main() {
    std::process::exit(otb_core::cli::run_cli(std::env::args_os()));
}
