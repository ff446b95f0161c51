fn main() {
    std::process::exit(eeg_vowel::cli::run(std::env::args_os()));
}
