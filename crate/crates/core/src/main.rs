fn main() {
    std::process::exit(bltree::cli::run(std::env::args_os()));
}
