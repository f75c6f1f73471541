//! Runs the finite-difference gradient suite and prints one line per path.

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cases = hazemeta::gradcheck::run_suite(seed);
    for c in &cases {
        println!("{}", c.summary());
        if std::env::var_os("GRADCHECK_VERBOSE").is_some() {
            println!("    worst: {:?}", c.report.worst);
        }
    }
    if cases.iter().any(|c| !c.passed()) {
        std::process::exit(3);
    }
}
