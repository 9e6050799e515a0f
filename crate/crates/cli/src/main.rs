fn main() {
    std::process::exit(kg_cli::run(std::env::args_os()));
}
