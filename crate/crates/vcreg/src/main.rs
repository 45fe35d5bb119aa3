fn main() {
    std::process::exit(vcreg::cli::run(std::env::args_os()));
}
