fn main() {
    std::process::exit(pst_core::cli::main_with_args(std::env::args_os()));
}
