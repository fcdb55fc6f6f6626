fn main() {
    std::process::exit(sxnet_cli::run(std::env::args_os()));
}
