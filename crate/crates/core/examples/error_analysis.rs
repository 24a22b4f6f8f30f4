//! Grades a handful of predictions and prints the error breakdown, both as
//! text and as the JSON report.

use dmel::catalog::{EntityCatalog, EntityRecord};
use dmel::decoder::LinkResult;
use dmel::eval::{evaluate, grade};
use dmel::preprocess::{MentionInstance, Span, Task};

fn instance(id: &str, gold: Option<&str>, candidates: &[&str]) -> MentionInstance {
    MentionInstance {
        id: id.into(),
        text: "a mention in context".into(),
        mention: Span { start: 2, end: 9 },
        table: None,
        image_ref: None,
        candidates: Some(candidates.iter().map(|c| c.to_string()).collect()),
        gold: gold.map(String::from),
        task: Task::EntityLinking,
    }
}

fn result(id: &str, prediction: Option<&str>) -> LinkResult {
    LinkResult {
        instance_id: id.into(),
        prediction: prediction.map(String::from),
        best_logscore: Some(-1.0),
        topk: Vec::new(),
        threshold_applied: None,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let catalog = EntityCatalog::from_entries(
        ["Paris", "Paris Hilton", "Paris, Texas", "Texas"]
            .iter()
            .enumerate()
            .map(|(i, n)| EntityRecord { id: format!("Q{i}"), name: n.to_string(), aliases: Vec::new() })
            .collect(),
    )?;
    let cands = ["Paris", "Paris Hilton", "Paris, Texas"];
    let dataset = vec![
        instance("a", Some("Paris"), &cands),
        instance("b", Some("Paris"), &cands),
        instance("c", Some("Texas"), &cands),
        instance("d", None, &cands),
        instance("e", Some("Paris Hilton"), &cands),
        instance("f", None, &cands),
    ];
    let results = vec![
        result("a", Some("Paris")),
        result("b", Some("Paris Hilton")),
        result("c", Some("Paris")),
        result("d", Some("Paris, Texas")),
        result("e", None),
        result("f", None),
    ];

    for g in grade(&results, &dataset, &catalog)? {
        println!("{}: predicted {:?}, gold {:?} -> {}", g.id, g.prediction, g.gold, g.category.as_str());
    }
    let report = evaluate(&results, &dataset, &catalog)?;
    println!("\n{}", report.to_text());
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
