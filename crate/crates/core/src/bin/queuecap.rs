fn main() {
    std::process::exit(queuecap::cli::main_with_args(std::env::args_os()));
}
