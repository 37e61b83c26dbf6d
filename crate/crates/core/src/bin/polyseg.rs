fn main() {
    std::process::exit(polyseg::cli::run(std::env::args_os()));
}
