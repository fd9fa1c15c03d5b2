fn main() {
    std::process::exit(prosody_mi::cli::run(std::env::args_os()));
}
