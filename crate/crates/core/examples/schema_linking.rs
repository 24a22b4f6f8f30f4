//! Grounds question phrases to `table # column` names of a database schema.
//! Every column of every table is a candidate; no catalog is involved.

use dmel::catalog::{schema_candidates, TableSchema};
use dmel::link::{LinkOptions, Linker};
use dmel::preprocess::{MentionInstance, Span, Task};
use dmel::scorer::{LexicalParams, LexicalScorer};
use dmel::tokenizer::{TokenSeq, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schemas = vec![
        TableSchema { table_name: "singer".into(), columns: vec!["name".into(), "country".into(), "age".into()] },
        TableSchema { table_name: "concert".into(), columns: vec!["name".into(), "year".into(), "stadium id".into()] },
        TableSchema { table_name: "stadium".into(), columns: vec!["name".into(), "capacity".into()] },
    ];
    let candidates = schema_candidates("schema", &schemas)?;
    println!("{} candidate columns", candidates.len());

    let questions = [
        ("q1", "how many singers come from each country", "country"),
        ("q2", "list every concert year after 2014", "concert year"),
        ("q3", "which stadium has the largest capacity", "capacity"),
    ];
    let corpus: Vec<String> = candidates
        .candidates()
        .iter()
        .cloned()
        .chain(questions.iter().map(|q| q.1.to_string()))
        .chain(["schema linking".to_string()])
        .collect();
    let vocab = Vocabulary::build(&corpus, usize::MAX)?;
    let seqs: Vec<TokenSeq> = candidates.candidates().iter().map(|c| vocab.tokenize(c)).collect();
    let scorer = LexicalScorer::new(&vocab, &seqs, LexicalParams::default())?;

    let mut options = LinkOptions::default();
    options.decode.beam = 3;
    options.assemble.task_prefix = true;
    let linker = Linker::new(&vocab, &scorer, options)?.with_schema_candidates(candidates)?;

    for (id, text, phrase) in questions {
        let start = text.find(phrase).expect("phrase occurs in the question");
        let instance = MentionInstance {
            id: id.into(),
            text: text.into(),
            mention: Span { start, end: start + phrase.len() },
            table: None,
            image_ref: None,
            candidates: None,
            gold: None,
            task: Task::SchemaLinking,
        };
        let result = linker.link_one(&instance)?;
        let top: Vec<String> = result.topk.iter().map(|e| format!("{} ({:.2})", e.entity, e.score)).collect();
        println!("{text:?} [{phrase}] -> {}", top.join(", "));
    }
    Ok(())
}
