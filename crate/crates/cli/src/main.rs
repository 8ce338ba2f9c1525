fn main() {
    std::process::exit(slabdecay_cli::run(std::env::args_os()));
}
