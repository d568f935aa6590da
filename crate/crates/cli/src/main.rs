fn main() {
    std::process::exit(consflow_cli::dispatch(std::env::args_os()));
}
