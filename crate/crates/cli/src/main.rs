fn main() {
    std::process::exit(snowformer_cli::run(std::env::args_os()));
}
