//! Score predictions, aggregate over repeated runs and render the comparison
//! table with growth rates against a baseline.

use labelnoise::metrics::{
    aggregate, compute_metrics, confusion, growth_rate, markdown_table, TableColumn,
};

fn main() -> labelnoise::Result<()> {
    let y_true: Vec<usize> = (0..300).map(|i| i % 3).collect();
    // two methods, three runs each; the second makes fewer mistakes
    let runs = |every: usize| -> labelnoise::Result<Vec<_>> {
        (0..3)
            .map(|r| {
                let pred: Vec<usize> = y_true
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| if (i + r) % every == 0 { (y + 1) % 3 } else { y })
                    .collect();
                compute_metrics(&confusion(&y_true, &pred, 3)?)
            })
            .collect()
    };
    let base_runs = runs(4)?;
    let better_runs = runs(9)?;
    println!("first baseline run, confusion rows:");
    for row in &base_runs[0].confusion.counts {
        println!("  {row:?}");
    }
    println!();

    let base = aggregate(&base_runs)?;
    let better = aggregate(&better_runs)?;
    let rates: Vec<Option<f64>> = ["accuracy", "top1_accuracy", "precision", "recall", "f1"]
        .iter()
        .map(|m| growth_rate(base.mean(m)?, better.mean(m)?).ok())
        .collect();
    let table = markdown_table(&[
        TableColumn {
            method: "baseline",
            report: &base,
            growth_rates: None,
        },
        TableColumn {
            method: "improved",
            report: &better,
            growth_rates: Some(rates),
        },
    ]);
    println!("{table}");
    Ok(())
}
