fn main() {
    std::process::exit(slotpath::cli::dispatch(std::env::args_os()));
}
