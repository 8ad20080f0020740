fn main() {
    std::process::exit(ctxrec::cli::run_from(std::env::args_os()));
}
