fn main() {
    std::process::exit(brief::run(std::env::args_os()));
}
