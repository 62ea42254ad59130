fn main() {
    std::process::exit(layer_specialty::cli::run(std::env::args_os()));
}
