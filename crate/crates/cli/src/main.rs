fn main() {
    std::process::exit(dgin_cli::run(std::env::args_os()));
}
