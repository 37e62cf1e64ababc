fn main() {
    std::process::exit(coopmber_cli::cli_main(std::env::args_os()));
}
