fn main() {
    std::process::exit(sibprefix_cli::run(std::env::args_os()));
}
