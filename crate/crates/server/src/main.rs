fn main() {
    std::process::exit(flowquery_server::cli::run(std::env::args_os()));
}
