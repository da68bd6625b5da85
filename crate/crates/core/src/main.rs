// Training allocates and frees large tape buffers every step; the system
// allocator returns them to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(vitcap::cli::main_with_args(std::env::args_os()));
}
