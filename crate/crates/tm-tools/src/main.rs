use std::io::{stderr, stdout};

fn main() {
    let code = tm_tools::cli::run(std::env::args_os(), &mut stdout(), &mut stderr());
    std::process::exit(code);
}
