fn main() {
    std::process::exit(stpnc::cli::main_with_args(std::env::args_os()));
}
