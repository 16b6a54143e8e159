fn main() {
    std::process::exit(gainlora::cli::main_from(std::env::args_os()));
}
