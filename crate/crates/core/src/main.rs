fn main() {
    std::process::exit(twistlab::cli::run(std::env::args_os()));
}
