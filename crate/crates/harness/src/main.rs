fn main() {
    std::process::exit(unlearn_forge::cli::main_with(std::env::args_os()));
}
