fn main() {
    std::process::exit(kbin::cli::run(std::env::args_os()));
}
