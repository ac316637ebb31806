//! Interrupts a training run after two epochs, saves a checkpoint, resumes
//! from the file and confirms the loss history matches an uninterrupted
//! run bit for bit.
//!
//! ```text
//! cargo run --release --example checkpoint_resume
//! ```

use spangraph::corpus::{generate_synthetic, SyntheticConfig};
use spangraph::engine::{Checkpoint, TrainConfig, Trainer};
use spangraph::model::{ModelConfig, SpanConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = |seed| {
        generate_synthetic(&SyntheticConfig {
            n_docs: 12,
            seed,
            ..SyntheticConfig::default()
        })
    };
    let (train, dev) = (data(1)?, data(2)?);
    let (tr, dv) = (&train.corpus.documents, &dev.corpus.documents);
    let model = ModelConfig {
        spans: SpanConfig {
            dim: 32,
            ..SpanConfig::default()
        },
        hidden: 32,
        event_hidden: 64,
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        max_epochs: 5,
        ..TrainConfig::default()
    };

    let mut full = Trainer::new(
        model.clone(),
        config.clone(),
        train.corpus.schema.clone(),
        tr,
        dv,
        None,
    )?;
    full.fit(|_| true)?;

    let mut first = Trainer::new(model, config, train.corpus.schema.clone(), tr, dv, None)?;
    first.run_epoch()?;
    first.run_epoch()?;
    let path = std::env::temp_dir().join("spangraph-resume.ckpt");
    first.checkpoint().save(&path)?;
    let ck = Checkpoint::load_for(&path, &train.corpus.schema)?;
    let mut resumed = Trainer::resume(&ck, tr, dv, None)?;
    resumed.fit(|_| true)?;

    println!("epoch  uninterrupted          resumed");
    for (a, b) in full.state.history.iter().zip(&resumed.state.history) {
        let mark = if a.train_loss.to_bits() == b.train_loss.to_bits() {
            "="
        } else {
            "!"
        };
        println!("{:>5}  {:<22} {:<22} {mark}", a.epoch, a.train_loss, b.train_loss);
    }
    let same = full.state.history == resumed.state.history;
    println!("histories identical: {same}");
    Ok(())
}
