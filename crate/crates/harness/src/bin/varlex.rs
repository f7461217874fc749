fn main() {
    std::process::exit(varlex_harness::run(std::env::args_os()));
}
