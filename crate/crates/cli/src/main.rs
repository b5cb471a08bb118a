fn main() {
    std::process::exit(metn_cli::run(std::env::args_os()));
}
