//! Train on a noiseless DNF task and print the extracted rules.
//!
//! `cargo run --release --example recover_dnf -- [epochs] [lr]`
//! (defaults: 40 epochs at lr 0.01).

use crl::data::{gen_dnf, split, DnfSpec};
use crl::eval::evaluate;
use crl::rules::{extract_rules, formulas_equivalent, render_rules, Formula, ReportFormat};
use crl::train::{train, TrainConfig};

fn main() -> crl::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(40, |s| s.parse().expect("epochs"));
    let lr = args.next().map_or(0.01, |s| s.parse().expect("lr"));

    let spec = DnfSpec {
        concepts: 8,
        terms: vec![vec![0, 1], vec![2, 3], vec![4]],
        samples: 2000,
        concept_noise: 0.0,
        label_noise: 0.0,
        seed: 0,
    };
    let parts = split(&gen_dnf(&spec)?, &[0.8, 0.2], 0)?;
    let config = TrainConfig {
        epochs,
        lr_init: lr,
        ..TrainConfig::default()
    };
    let outcome = train(&config, &parts[0], None)?;
    let model = &outcome.best_model;

    let metrics = evaluate(model, &parts[1])?;
    println!("best epoch {}, test accuracy {:.4}", outcome.best_epoch, metrics.diag_acc);

    let rules = extract_rules(model);
    print!("{}", render_rules(&rules, ReportFormat::Text, None)?);
    let truth = Formula::or(spec.terms.iter().map(|t| Formula::and(t.iter().map(|&i| Formula::Literal(i)))));
    println!(
        "union of positive rules equivalent to the target: {}",
        formulas_equivalent(&rules.class_union(1), &truth, spec.concepts)?
    );
    Ok(())
}
