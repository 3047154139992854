fn main() {
    std::process::exit(ssnaps_cli::run(std::env::args_os()));
}
