fn main() {
    std::process::exit(finiteflow::bench::cli_main(std::env::args_os()));
}
