fn main() {
    std::process::exit(dsf_cli::run(std::env::args_os()));
}
