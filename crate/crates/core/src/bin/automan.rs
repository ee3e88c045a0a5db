fn main() {
    std::process::exit(automan::cli::main_with(std::env::args_os()));
}
