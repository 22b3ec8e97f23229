fn main() {
    std::process::exit(dualnav::cli::run(std::env::args_os()));
}
