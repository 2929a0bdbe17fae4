fn main() {
    std::process::exit(ffspin::cli::run(std::env::args_os()));
}
