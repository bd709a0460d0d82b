fn main() {
    std::process::exit(varineq::cli::main_with(std::env::args_os()));
}
