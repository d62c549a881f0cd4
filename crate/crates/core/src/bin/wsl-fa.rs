fn main() {
    std::process::exit(wsl_fa::cli::run(std::env::args_os()));
}
