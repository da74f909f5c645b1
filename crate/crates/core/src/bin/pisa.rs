fn main() {
    std::process::exit(pisa_core::cli::run_cli(std::env::args_os()));
}
