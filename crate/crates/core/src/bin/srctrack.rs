fn main() {
    std::process::exit(srctrack::harness::cli_main(std::env::args_os()));
}
