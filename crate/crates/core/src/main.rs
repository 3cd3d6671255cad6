use std::io;

fn main() {
    let mut stdout = io::stdout().lock();
    let mut stderr = io::stderr().lock();
    let mut cli_io = tailguard::cli::Io {
        stdout: &mut stdout,
        stderr: &mut stderr,
        transport: None,
    };
    let code = tailguard::cli::run(std::env::args_os(), &mut cli_io);
    std::process::exit(code);
}
