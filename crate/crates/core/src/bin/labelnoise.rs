fn main() {
    std::process::exit(labelnoise::harness::cli::cli_main(std::env::args_os()));
}
