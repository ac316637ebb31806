//! Scores hand-written predictions against gold annotations, showing how
//! each task decides what counts as correct.
//!
//! ```text
//! cargo run --example evaluate_metrics
//! ```

use spangraph::corpus::{parse_document, LabelSchema};
use spangraph::metrics::{evaluate, Task};

const GOLD: &str = r#"{"doc_key":"d","sentences":[["Smith","visited","Acme","in","Paris"]],
 "ner":[[[0,0,"PER"],[2,2,"ORG"],[4,4,"LOC"]]],
 "relations":[[[0,0,2,2,"WORKS_FOR"],[2,2,4,4,"LOCATED_IN"]]],
 "events":[[[[1,"TRAVEL"],[0,0,"ENTITY"],[4,4,"DESTINATION"]]]]}"#;

// Acme mislabeled, one relation reversed, right trigger with a wrong role.
const PRED: &str = r#"{"doc_key":"d","sentences":[["Smith","visited","Acme","in","Paris"]],
 "ner":[[[0,0,"PER"],[2,2,"LOC"],[4,4,"LOC"]]],
 "relations":[[[0,0,2,2,"WORKS_FOR"],[4,4,2,2,"LOCATED_IN"]]],
 "events":[[[[1,"TRAVEL"],[0,0,"DESTINATION"],[4,4,"DESTINATION"]]]]}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = LabelSchema::new(
        vec!["LOC".into(), "ORG".into(), "PER".into()],
        vec!["LOCATED_IN".into(), "WORKS_FOR".into()],
        vec!["TRAVEL".into()],
        vec!["DESTINATION".into(), "ENTITY".into()],
    )?;
    let gold = parse_document(&GOLD.replace('\n', ""), &schema)?;
    let pred = parse_document(&PRED.replace('\n', ""), &schema)?;
    let ev = evaluate(&[pred], &[gold], &Task::ALL)?;
    println!(
        "{:<16} {:>3} {:>3} {:>3} {:>6} {:>6} {:>6}",
        "task", "tp", "fp", "fn", "P", "R", "F1"
    );
    for t in Task::ALL {
        let s = ev.score(t).expect("evaluated");
        println!(
            "{:<16} {:>3} {:>3} {:>3} {:>6.3} {:>6.3} {:>6.3}",
            t.key(),
            s.tp,
            s.fp,
            s.fn_,
            s.precision,
            s.recall,
            s.f1
        );
    }
    Ok(())
}
