use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = grdpg_lab::Args::parse();
    match grdpg_lab::run(&args) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("wrote {} files to {}", outcome.outputs.len(), outcome.output_dir.display());
        }
        Err(e) => {
            eprintln!("grdpg-lab: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
