//! Learns the nil threshold on a development split and applies it to a test
//! split. Below the threshold the linker abstains.

use dmel::decoder::{calibrate_threshold, f1_at_threshold};
use dmel::eval::evaluate;
use dmel::link::{dev_points, LinkOptions, Linker};
use dmel::scorer::{LexicalParams, LexicalScorer};
use dmel::synth::{linking_corpus, LinkingSpec};
use dmel::tokenizer::{TokenSeq, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = LinkingSpec { instances: 400, nil_rate: 0.25, ..Default::default() };
    let corpus = linking_corpus(11, &spec);
    let (dev, test) = corpus.instances.split_at(200);

    let vocab = Vocabulary::build(corpus.vocab_corpus(), usize::MAX)?;
    let names: Vec<TokenSeq> = corpus.catalog.names().iter().map(|n| vocab.tokenize(n)).collect();
    let scorer = LexicalScorer::new(&vocab, &names, LexicalParams::default())?;
    let linker = Linker::new(&vocab, &scorer, LinkOptions::default())?;

    let dev_results = linker.link_all(dev, 4)?;
    let points = dev_points(&dev_results, dev)?;
    let theta = calibrate_threshold(&points);
    println!("calibrated threshold {theta:.4}");
    println!("dev F1 without threshold {:.3}, with {:.3}", f1_at_threshold(&points, f64::NEG_INFINITY), f1_at_threshold(&points, theta));

    let raw = linker.link_all(test, 4)?;
    let thresholded: Vec<_> = raw.iter().cloned().map(|r| r.apply_nil_threshold(theta)).collect();
    for (label, results) in [("no threshold", &raw), ("calibrated", &thresholded)] {
        let report = evaluate(results, test, &corpus.catalog)?;
        println!("test {label:>12}: P {:.3} R {:.3} F1 {:.3}", report.precision, report.recall, report.micro_f1);
    }
    Ok(())
}
