//! Flip clean labels through the built-in transition matrices and compare the
//! empirical flip pattern with the matrix that produced it.

use labelnoise::noise::{inject_noise, KnownMatrix, TransitionMatrix};

fn main() -> labelnoise::Result<()> {
    let labels: Vec<usize> = (0..30_000).map(|i| i % 3).collect();
    for which in [KnownMatrix::Fashion05, KnownMatrix::Fashion06] {
        let t = TransitionMatrix::known(which);
        let (_, record) = inject_noise(&labels, &t, 42)?;
        println!(
            "{} ({} of {} labels flipped)",
            which.name(),
            record.n_flipped,
            labels.len()
        );
        println!("true:\n{t}");
        let empirical = TransitionMatrix::from_rows(record.empirical_matrix)?;
        println!("empirical:\n{empirical}");
    }
    Ok(())
}
