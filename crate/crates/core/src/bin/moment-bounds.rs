fn main() {
    std::process::exit(moment_bounds::cli::run(std::env::args_os()));
}
