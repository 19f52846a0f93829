fn main() {
    std::process::exit(dpfair::cli::run(std::env::args_os()));
}
