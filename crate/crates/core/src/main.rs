fn main() {
    std::process::exit(bvd::pipeline::cli::run(std::env::args_os()));
}
