fn main() {
    let env = env_logger::Env::new().filter_or("GAME_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
    std::process::exit(invest_game::cli::cli_main(std::env::args_os()));
}
