fn main() {
    std::process::exit(ftt::cli::run(std::env::args().collect()));
}
