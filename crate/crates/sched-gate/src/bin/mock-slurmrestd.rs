//! inetd-style mock of the scheduler REST daemon: one request on stdin, one
//! response on stdout, then exit. See the library `mock` module for behavior.

use std::io::{Read, Write};

fn main() {
    let mut input = Vec::new();
    if std::io::stdin().read_to_end(&mut input).is_err() {
        std::process::exit(1);
    }
    let (output, code) = sched_gate::mock::serve_once(&input, &|name| std::env::var(name).ok());
    let mut stdout = std::io::stdout();
    if stdout.write_all(&output).and_then(|_| stdout.flush()).is_err() {
        std::process::exit(1);
    }
    std::process::exit(code);
}
