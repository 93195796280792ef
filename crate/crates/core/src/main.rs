fn main() {
    std::process::exit(spiking_hockey::cli::run_from(std::env::args_os()));
}
