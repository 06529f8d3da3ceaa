fn main() {
    std::process::exit(refuzz::cli::run(std::env::args_os()));
}
