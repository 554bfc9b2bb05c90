fn main() {
    std::process::exit(concept_neurons::cli::run_cli(std::env::args_os()));
}
