fn main() {
    std::process::exit(excitonic::cli::run(std::env::args_os()));
}
