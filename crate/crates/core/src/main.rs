fn main() {
    std::process::exit(gmm_moments::cli::run_cli(std::env::args_os()));
}
