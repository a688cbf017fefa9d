fn main() {
    std::process::exit(flexagg::run());
}
