fn main() {
    std::process::exit(mfcavi::cli::run_cli(std::env::args_os()));
}
