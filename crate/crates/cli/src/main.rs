fn main() {
    std::process::exit(crl_cli::main_with_args(std::env::args_os()));
}
