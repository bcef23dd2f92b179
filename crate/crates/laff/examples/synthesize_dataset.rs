//! Generate a synthetic cross-modal dataset on disk.
//!
//! Every video draws a latent vector; informative features are seeded
//! linear images of it plus noise, captions share their video's latent,
//! and one video feature is pure noise. Same spec, same bytes — run it
//! twice and diff the output.
//!
//! ```bash
//! cargo run --example synthesize_dataset
//! ```

use laff::dataio::formats::save_features_binary;
use laff::dataio::{synth_generate, SynthSpec};

fn main() -> laff::Result<()> {
    let mut spec = SynthSpec::desk_default();
    spec.videos = 400; // keep the example snappy; the default is 2,000

    let (store, manifest) = synth_generate(&spec)?;

    let out = std::path::Path::new("runs/synthesize_dataset");
    let features = out.join("features");
    std::fs::create_dir_all(&features)?;
    for name in store.names() {
        let set = store.get(name)?;
        save_features_binary(set, &features.join(format!("{name}.lftr")))?;
        println!(
            "wrote {:>10} ({} items, dim {})",
            format!("{name}.lftr"),
            set.len(),
            set.dim
        );
    }
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;

    println!(
        "\n{} videos, {} captions; splits train/val/test = {}/{}/{}",
        manifest.videos.len(),
        manifest.captions.len(),
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len()
    );
    println!("dataset written under {}", out.display());
    Ok(())
}
