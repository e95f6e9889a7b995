#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(distsynth::cli::parse_and_dispatch(std::env::args_os()));
}
