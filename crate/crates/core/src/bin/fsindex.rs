fn main() {
    std::process::exit(fsindex::cli::run(std::env::args_os()));
}
