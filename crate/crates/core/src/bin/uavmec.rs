use clap::Parser;

fn main() {
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).init();
    let code = uavmec::cli::main_with(uavmec::cli::Cli::parse());
    std::process::exit(code);
}
