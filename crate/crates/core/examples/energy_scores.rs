//! Free energy, confidence and Gibbs probabilities of a few logit vectors.

use stagebank::energy::{confidence_score, energy_of_pair, free_energy, gibbs_probabilities, Temperature};

fn main() -> stagebank::Result<()> {
    let logits = [2.0, 0.5, -1.0];
    for t in [0.1, 1.0, 10.0] {
        let t = Temperature::new(t)?;
        let p = gibbs_probabilities(&logits, t)?;
        println!(
            "T={:<5} F={:>8.4} H={:>8.4} p={:.3?}",
            t.value(),
            free_energy(&logits, t)?,
            confidence_score(&logits, t)?,
            p
        );
    }
    println!("energy of (x, class 0) = {}", energy_of_pair(&logits, 0)?);

    // stays finite where a naive exp would overflow
    let huge = [1000.0, 999.0, -1000.0];
    println!("F of large logits at T=0.001: {}", free_energy(&huge, Temperature::new(0.001)?)?);
    Ok(())
}
