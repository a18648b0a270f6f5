fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(qsgan_cli::run_cli(&argv));
}
