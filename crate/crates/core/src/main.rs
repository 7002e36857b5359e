fn main() {
    std::process::exit(selfbridge::cli::run(std::env::args_os()));
}
