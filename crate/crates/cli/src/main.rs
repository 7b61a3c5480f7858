fn main() {
    env_logger::init();
    std::process::exit(ncf_flow::main_with(std::env::args_os()));
}
