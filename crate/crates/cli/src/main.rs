fn main() {
    std::process::exit(dualsteer_cli::run(std::env::args_os().skip(1)));
}
