fn main() {
    std::process::exit(archetypal::cli::run(std::env::args_os()));
}
