fn main() {
    std::process::exit(eyehead::cli::dispatch(std::env::args_os()));
}
