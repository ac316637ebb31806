//! Trains the default model on a 50-document synthetic corpus and reports
//! training-set F1 per epoch until entities and relations are fit.
//!
//! ```text
//! cargo run --release --example train_overfit -- [max_epochs]
//! ```

use std::time::Instant;

use spangraph::corpus::{generate_synthetic, SyntheticConfig};
use spangraph::engine::{TrainConfig, Trainer};
use spangraph::metrics::Task;
use spangraph::model::ModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let max_epochs: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(200);
    let synth = generate_synthetic(&SyntheticConfig::default())?;
    let docs = synth.corpus.documents;
    let config = TrainConfig {
        max_epochs,
        early_stopping_patience: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(
        ModelConfig::default(),
        config,
        synth.corpus.schema,
        &docs,
        &[],
        None,
    )?;
    println!("{} parameters", trainer.store.num_scalars());
    let start = Instant::now();
    while !trainer.finished() {
        let r = trainer.run_epoch()?;
        let ev = trainer.evaluate(&docs)?;
        let f1 = |t| ev.score(t).map_or(0.0, |s| s.f1);
        println!(
            "epoch {:3}  loss {:.4}  entity {:.3}  relation {:.3}  trigger {:.3}  argument {:.3}  {:.1}s",
            r.epoch,
            r.train_loss,
            f1(Task::Entity),
            f1(Task::Relation),
            f1(Task::TriggerClass),
            f1(Task::ArgumentClass),
            start.elapsed().as_secs_f64()
        );
        if f1(Task::Entity) >= 0.99 && f1(Task::Relation) >= 0.95 {
            println!("fit after {} epochs", r.epoch + 1);
            break;
        }
    }
    Ok(())
}
