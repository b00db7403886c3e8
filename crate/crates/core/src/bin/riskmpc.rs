fn main() {
    std::process::exit(riskmpc::cli::run(std::env::args_os()));
}
