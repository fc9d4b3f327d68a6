fn main() {
    std::process::exit(phasecal::cli::run(std::env::args_os()));
}
