//! Generates a synthetic corpus, writes it as jsonl plus metadata, and
//! prints the first document and the ambiguous mentions it contains.
//!
//! ```text
//! cargo run --example synth_corpus -- [output_dir] [ambiguity_rate]
//! ```

use std::path::PathBuf;

use spangraph::corpus::{generate_synthetic, LabelKind, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir: PathBuf = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("spangraph-synth"), PathBuf::from);
    let ambiguity_rate: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.5);
    let synth = generate_synthetic(&SyntheticConfig {
        ambiguity_rate,
        ..SyntheticConfig::default()
    })?;
    std::fs::create_dir_all(&dir)?;
    synth.write(&dir, "synthetic")?;

    let c = &synth.corpus;
    println!(
        "{} documents, {} sentences, {} ambiguous mentions -> {}",
        c.documents.len(),
        c.num_sentences(),
        synth.metadata.ambiguous_mentions.len(),
        dir.display()
    );
    let doc = &c.documents[0];
    println!("\n{}", doc.doc_key);
    for (si, s) in doc.sentences.iter().enumerate() {
        println!("  [{si}] {}", s.tokens.join(" "));
        for e in &s.entities {
            let text = s.tokens[e.span.start..e.span.end].join(" ");
            println!("      {text:<12} {}", c.schema.name(LabelKind::Entity, e.label));
        }
        for r in &s.relations {
            println!(
                "      {}..{} -{}-> {}..{}",
                r.head.start,
                r.head.end,
                c.schema.name(LabelKind::Relation, r.label),
                r.tail.start,
                r.tail.end
            );
        }
        for ev in &s.events {
            println!(
                "      trigger '{}' {}",
                s.tokens[ev.trigger],
                c.schema.name(LabelKind::Trigger, ev.label)
            );
        }
    }
    for (m, label) in synth
        .ambiguous_labels()
        .iter()
        .filter(|(m, _)| m.doc_key == doc.doc_key)
    {
        println!(
            "  ambiguous: sentence {} tokens {}..{} is {}",
            m.sentence,
            m.start,
            m.end,
            c.schema.name(LabelKind::Entity, *label)
        );
    }
    Ok(())
}
