fn main() {
    std::process::exit(rollhol_cli::run_cli(std::env::args_os()));
}
