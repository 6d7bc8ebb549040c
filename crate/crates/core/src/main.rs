use clap::Parser;

fn main() {
    std::process::exit(amf::cli::run(amf::cli::Cli::parse()));
}
