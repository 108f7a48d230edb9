fn main() {
    std::process::exit(lift_cli::run(std::env::args_os()));
}
