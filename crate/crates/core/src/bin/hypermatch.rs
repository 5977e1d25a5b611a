fn main() {
    std::process::exit(hypermatch::cli::run(std::env::args_os()));
}
