fn main() {
    std::process::exit(tddsim::cli::main_from(std::env::args_os()));
}
