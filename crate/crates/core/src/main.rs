fn main() {
    std::process::exit(ttada::cli::run(std::env::args_os()));
}
