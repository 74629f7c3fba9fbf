fn main() {
    std::process::exit(stillflow_cli::run(std::env::args_os()));
}
