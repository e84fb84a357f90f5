fn main() {
    std::process::exit(kscert::cli::main_with_args(std::env::args_os()));
}
