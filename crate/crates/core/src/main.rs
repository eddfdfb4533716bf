fn main() {
    std::process::exit(safe_discharge::cli::run_from_args(std::env::args_os()));
}
