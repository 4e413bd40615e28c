fn main() {
    std::process::exit(affect_np::cli::run(std::env::args_os()));
}
