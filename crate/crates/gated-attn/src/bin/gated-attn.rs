fn main() {
    std::process::exit(gated_attn::cli::run());
}
