//! Nearest-entry quantization and EMA updates on a small codebook.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vqloco::codebook::Codebook;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cb = Codebook::new(8, 2, &mut rng);
    let centers = [[1.0, 0.0], [-1.0, 0.5], [0.0, -1.0]];
    let noise = Normal::new(0.0, 0.1)?;
    for round in 0..300 {
        let z: Vec<Vec<f64>> = (0..60)
            .map(|i| centers[i % 3].iter().map(|c| c + noise.sample(&mut rng)).collect())
            .collect();
        let idx: Vec<usize> = z.iter().map(|v| cb.quantize(v).map(|q| q.0)).collect::<Result<_, _>>()?;
        cb.ema_update(&z, &idx)?;
        if round % 100 == 99 {
            let used: std::collections::BTreeSet<_> = idx.iter().collect();
            println!("round {}: entries in use {used:?}", round + 1);
        }
    }
    for c in centers {
        let (i, e) = cb.quantize(&c)?;
        println!("{c:?} -> entry {i} at [{:.3}, {:.3}]", e[0], e[1]);
    }
    Ok(())
}
