fn main() {
    std::process::exit(snapspan::cli::run(std::env::args_os()));
}
