fn main() {
    std::process::exit(nclamp::cli::run(std::env::args_os()));
}
