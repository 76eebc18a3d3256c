//! Trains one head on a single synthetic stage and prints the loss curve.

use stagebank::data::{generate_stream, StreamSpec};
use stagebank::energy::{free_energy, Temperature};
use stagebank::head::{Architecture, EnergyConfig};
use stagebank::trainer::{init_head, train_stage, OptimizerConfig};

fn main() -> stagebank::Result<()> {
    let spec = StreamSpec { num_stages: 1, ..StreamSpec::default() };
    let (split, test) = generate_stream(&spec)?.remove(0).into_splits();
    let cfg = EnergyConfig::default();
    let opt = OptimizerConfig::default();

    let head = init_head(1, split.label_set.clone(), spec.feature_dim, Architecture::Linear, 0)?;
    let out = train_stage(&split, head, &cfg, &opt)?;
    for (epoch, loss) in out.loss_trace.iter().enumerate().step_by(5) {
        println!("epoch {epoch:>2}: loss {loss:.4}");
    }

    let head = out.head;
    let mut hits = 0;
    let mut mean_f = 0.0;
    for r in &test {
        let z = head.forward(&r.features)?;
        mean_f += free_energy(&z, Temperature::ONE)? / test.len() as f64;
        let k = (0..z.len()).fold(0, |b, k| if z[k] > z[b] { k } else { b });
        hits += usize::from(head.label_set()[k] == r.label);
    }
    println!("test accuracy {:.3}, mean free energy {mean_f:.3} (anchor {})", hits as f64 / test.len() as f64, cfg.anchor);
    Ok(())
}
