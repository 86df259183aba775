fn main() {
    std::process::exit(quasitrack::app::main_with_args(std::env::args_os()));
}
