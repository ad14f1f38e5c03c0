fn main() {
    std::process::exit(lawnmeter::cli::main_with_args(std::env::args_os().collect()));
}
