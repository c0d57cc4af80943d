fn main() {
    std::process::exit(semilab::cli::run(std::env::args_os()));
}
