use stablemorph::backend::Registry;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let registry = Registry::builtin();
    let code = stablemorph::cli::run(
        std::env::args_os(),
        &registry,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
