fn main() {
    std::process::exit(trgan::cli::run(std::env::args_os()));
}
