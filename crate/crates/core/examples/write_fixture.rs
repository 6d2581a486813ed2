//! Regenerates the bundled four-column fixture.
//!
//! cargo run -p causaltab --example write_fixture -- fixtures/scm4

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures/scm4".into());
    causaltab::fixtures::write_scm4(&dir, causaltab::fixtures::SCM4_ROWS, causaltab::fixtures::SCM4_SEED).expect("fixture written");
}
