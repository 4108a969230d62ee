fn main() {
    std::process::exit(critclust_cli::main_with(std::env::args_os()));
}
