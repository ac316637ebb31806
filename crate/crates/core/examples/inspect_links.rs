//! Trains briefly on a synthetic corpus, then prints the coreference link
//! strengths the propagation layer computed for one document and writes
//! them as CSV and DOT through the same code the `inspect` command uses.
//!
//! ```text
//! cargo run --release --example inspect_links -- [epochs]
//! ```

use spangraph::commands::{links_csv, links_dot, node_label, LinkRow};
use spangraph::corpus::{generate_synthetic, SyntheticConfig};
use spangraph::engine::{TrainConfig, Trainer};
use spangraph::model::ModelConfig;
use spangraph::propagation::Mechanism;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(30);
    let synth = generate_synthetic(&SyntheticConfig {
        ambiguity_rate: 1.0,
        ..SyntheticConfig::default()
    })?;
    let docs = &synth.corpus.documents;
    let config = TrainConfig {
        max_epochs: epochs,
        early_stopping_patience: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(
        ModelConfig::default(),
        config,
        synth.corpus.schema.clone(),
        docs,
        &[],
        None,
    )?;
    trainer.fit(|r| {
        eprintln!("epoch {} loss {:.3}", r.epoch, r.train_loss);
        true
    })?;

    let doc = &docs[0];
    let pred = trainer.predict(std::slice::from_ref(doc))?.remove(0);
    let text = |label: &str| -> String {
        let (s, range) = label.split_once(':').expect("sentence:range");
        let (a, b) = range.split_once('-').expect("start-end");
        let s: usize = s.parse().unwrap();
        doc.sentences[s].tokens[a.parse().unwrap()..b.parse().unwrap()].join(" ")
    };
    let rows: Vec<LinkRow> = pred
        .links
        .iter()
        .filter(|l| l.mechanism == Mechanism::Coref)
        .map(|l| LinkRow {
            doc_key: doc.doc_key.clone(),
            iteration: l.iteration,
            source: node_label(&l.source),
            target: node_label(&l.target),
            strength: l.strength,
        })
        .collect();
    println!("strongest antecedent per mention, last iteration:");
    let last = rows.iter().map(|r| r.iteration).max().unwrap_or(0);
    let mut sources: Vec<&str> = rows
        .iter()
        .filter(|r| r.iteration == last)
        .map(|r| r.source.as_str())
        .collect();
    sources.dedup();
    for src in sources {
        if let Some(best) = rows
            .iter()
            .filter(|r| r.source == src && r.iteration == last)
            .max_by(|a, b| a.strength.total_cmp(&b.strength))
        {
            println!(
                "  {:<10} {:<12} -> {:<12} {:.3}",
                src,
                text(src),
                text(&best.target),
                best.strength
            );
        }
    }
    let dir = std::env::temp_dir().join("spangraph-links");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("coref_links.csv"), links_csv(&rows))?;
    std::fs::write(dir.join("coref_links.dot"), links_dot(&rows, Mechanism::Coref))?;
    println!("wrote {} rows to {}", rows.len(), dir.display());
    Ok(())
}
