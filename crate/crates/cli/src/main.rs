fn main() {
    std::process::exit(plan2vec_cli::run(std::env::args_os()));
}
