fn main() {
    std::process::exit(smoothrnn_cli::run(std::env::args_os()));
}
