fn main() {
    std::process::exit(flexgrid_cli::main_with_args(std::env::args_os()));
}
