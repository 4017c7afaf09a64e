fn main() {
    std::process::exit(dedup_forge::cli::run(std::env::args_os()));
}
