//! Low-rank adaptation: the two-path and merged forms agree, and a zero `A`
//! leaves the base map untouched.

use dubalign::iec::{lora_forward, lora_forward_merged, LoraAdapter, LoraLinear};
use dubalign::numerics::{ParamStore, Tensor2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2D {
    Tensor2D::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> dubalign::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (d_out, d_in, rank) = (6, 8, 2);
    let w = random(&mut rng, d_out, d_in);
    let x: Vec<f64> = (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect();

    let adapter = LoraAdapter::new(random(&mut rng, d_out, rank), random(&mut rng, rank, d_in), "demo.w")?;
    let two = lora_forward(&x, &w, &adapter)?;
    let merged = lora_forward_merged(&x, &w, &adapter)?;
    let diff = two.iter().zip(&merged).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("rank {rank}: two-path vs merged max diff {diff:.1e}");

    let identity = LoraAdapter::identity(d_out, d_in, "demo.w");
    let base = w.matmul(&Tensor2D::new(d_in, 1, x.clone())?)?.into_data();
    println!("rank 0 equals base: {}", lora_forward(&x, &w, &identity)? == base);

    // stored layer: base frozen, adapters trainable, B starts at zero
    let layer = LoraLinear::new("demo", d_in, d_out, rank);
    let mut store = ParamStore::new();
    layer.init(&mut store, &mut rng);
    for name in [layer.weight(), layer.lora_a(), layer.lora_b()] {
        let e = store.entry(&name)?;
        println!("{name:<14} {:?} frozen={}", e.value.shape(), e.frozen);
    }
    Ok(())
}
