fn main() {
    std::process::exit(vbpe::cli::run(std::env::args_os()));
}
