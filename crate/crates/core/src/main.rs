fn main() {
    env_logger::init();
    std::process::exit(carcensus::cli::run(std::env::args_os()));
}
