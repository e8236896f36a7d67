use clap::Parser;
use mvn_core::cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().run() {
        Ok(Some(manifest)) => log::info!("wrote {}", manifest.out_dir.join(mvn_core::cli::MANIFEST_FILE).display()),
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
