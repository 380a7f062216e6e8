fn main() {
    std::process::exit(tsagent_cli::run(std::env::args_os()));
}
