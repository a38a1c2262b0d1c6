fn main() {
    std::process::exit(factorfilter::cli::run(std::env::args_os()));
}
