fn main() {
    std::process::exit(jcnce_cli::run(std::env::args_os()));
}
