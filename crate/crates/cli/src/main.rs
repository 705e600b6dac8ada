fn main() {
    std::process::exit(mufno_cli::run(std::env::args_os()));
}
