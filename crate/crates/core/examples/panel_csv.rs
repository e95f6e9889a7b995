//! Writes a simulated panel as long-format CSV and reads it back.
//!
//! `cargo run --release --example panel_csv`

use distsynth::panel_io::{read_panel, write_panel, PanelSpec};
use distsynth::rng::stream;
use distsynth::simlab::{generate, DgpSpec, Scenario};

fn main() -> distsynth::Result<()> {
    let spec = DgpSpec {
        n_micro: 5,
        t0: 2,
        seed: 3,
        ..DgpSpec::new(Scenario::Contamination)
    };
    let panel = generate(&spec, &mut stream(spec.seed, &[]))?.panel;

    let mut buf = Vec::new();
    write_panel(&mut buf, &panel)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    for line in text.lines().take(8) {
        println!("{line}");
    }
    println!("... {} rows", text.lines().count() - 1);

    let back = read_panel(
        text.as_bytes(),
        &PanelSpec {
            treated: "treated".into(),
            cutoff: "t2".into(),
            period_order: None,
        },
    )?;
    println!("round trip exact: {}", back == panel);
    Ok(())
}
