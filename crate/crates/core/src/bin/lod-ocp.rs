fn main() {
    std::process::exit(lod_ocp::cli::main_with_args(std::env::args_os()));
}
