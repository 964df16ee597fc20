fn main() {
    print!("{}", mcu_lab::ExperimentConfig::default().canonical_text());
}
