//! How a mention with an attached table becomes one token sequence, and what
//! the token cap and modality masks do to it.

use dmel::preprocess::{assemble_input, flatten_table, AssembleOptions, MentionInstance, ModalitySet, Span, Table, Task};
use dmel::tokenizer::Vocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = Table {
        headers: vec!["club".into(), "founded".into()],
        rows: vec![vec!["United".into(), "1878".into()], vec!["City".into(), "1880".into()]],
    };
    let instance = MentionInstance {
        id: "t1".into(),
        text: "the City squad".into(),
        mention: Span { start: 4, end: 8 },
        table: Some(table.clone()),
        image_ref: Some("crest.png".into()),
        candidates: None,
        gold: None,
        task: Task::EntityLinking,
    };
    let vocab = Vocabulary::build(["club founded United City 1878 1880 the squad entity linking 0 1 2 3 4 5 6 7 8 9"], usize::MAX)?;

    let flat = flatten_table(&table, &vocab)?;
    println!("table alone: {}", vocab.detokenize(&flat)?);

    let show = |label: &str, options: AssembleOptions| -> Result<(), Box<dyn std::error::Error>> {
        let input = assemble_input(&instance, &vocab, &options)?;
        println!(
            "{label:>12}: modalities {} | rows dropped {} | {}",
            input.modalities,
            input.truncated_rows,
            vocab.detokenize(&input.tokens)?
        );
        Ok(())
    };
    show("default", AssembleOptions::default())?;
    show("prefix", AssembleOptions { task_prefix: true, ..Default::default() })?;
    show("cap 8", AssembleOptions { table_token_cap: 8, ..Default::default() })?;
    show("mask U,V", AssembleOptions { mask: "U,V".parse::<ModalitySet>()?, ..Default::default() })?;

    let all_masked = AssembleOptions { mask: "L,U,V".parse()?, ..Default::default() };
    if let Err(e) = assemble_input(&instance, &vocab, &all_masked) {
        println!("masking everything: {e}");
    }
    Ok(())
}
