fn main() {
    std::process::exit(pmoe_cli::run_from(std::env::args_os()));
}
