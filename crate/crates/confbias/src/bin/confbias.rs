fn main() {
    std::process::exit(confbias::cli::run(std::env::args_os()));
}
