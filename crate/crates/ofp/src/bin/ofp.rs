fn main() {
    std::process::exit(ofp::cli::run_command(std::env::args_os()));
}
