fn main() {
    std::process::exit(dsm_gateway::cli::main(std::env::args_os()));
}
