fn main() {
    std::process::exit(flowdistill_cli::run(std::env::args_os()));
}
