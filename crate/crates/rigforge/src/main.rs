fn main() {
    std::process::exit(rigforge::cli::run(std::env::args_os()));
}
