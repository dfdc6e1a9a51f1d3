//! Runs an experiment from an inline TOML manifest, as the `wavemix` binary does.
//!
//! cargo run --release --example manifest_run -- [out-dir]

use wavemix::config::{ExperimentKind, Manifest};
use wavemix::experiments::{run_subcommand, RunOptions};

const MANIFEST: &str = r#"
[integrator]
t_end = 4.0

[experiment]
kind = "couple"
paths = 4
rank = 16
initial_radius = 3.0

[output]
every = 100
"#;

fn main() -> wavemix::Result<()> {
    let out_dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("wavemix-manifest-example"), Into::into);
    let manifest = Manifest::parse(MANIFEST)?;
    println!("manifest hash {}", manifest.hash());
    for w in manifest.warnings()? {
        println!("warning: {w}");
    }
    let summary = run_subcommand(
        &manifest,
        ExperimentKind::Couple,
        &RunOptions {
            out_dir,
            ..Default::default()
        },
    )?;
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    println!("{}", serde_json::to_string_pretty(&summary.summary)?);
    Ok(())
}
