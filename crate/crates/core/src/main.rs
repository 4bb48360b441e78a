fn main() {
    std::process::exit(presto::cli::main_with_args(std::env::args_os()));
}
