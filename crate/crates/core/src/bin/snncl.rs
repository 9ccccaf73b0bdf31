fn main() {
    std::process::exit(spiking_continual::cli::main_with_args(std::env::args_os()));
}
