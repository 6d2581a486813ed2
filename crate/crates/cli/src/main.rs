fn main() {
    std::process::exit(causaltab_cli::run(std::env::args_os()));
}
