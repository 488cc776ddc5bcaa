fn main() {
    std::process::exit(audiopedia::cli::run(std::env::args_os()));
}
