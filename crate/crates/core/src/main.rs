fn main() {
    std::process::exit(midl::cli::run(std::env::args_os()));
}
