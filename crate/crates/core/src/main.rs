fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHORUS_LOG", "warn")).init();
    std::process::exit(chorus::cli::run(std::env::args_os()));
}
