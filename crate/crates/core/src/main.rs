fn main() {
    std::process::exit(lbl::cli::run(std::env::args_os()));
}
