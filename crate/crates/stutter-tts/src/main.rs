fn main() {
    std::process::exit(stutter_tts::cli::run(std::env::args_os()));
}
