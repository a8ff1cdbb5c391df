fn main() {
    std::process::exit(servokit::cli::main_with_args(std::env::args_os()));
}
