fn main() {
    std::process::exit(neuroimpute::cli::cli_main(std::env::args_os()));
}
