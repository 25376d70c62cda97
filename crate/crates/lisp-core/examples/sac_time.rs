use lisp_core::mat::Mat;
use lisp_core::skills::sac::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    lisp_core::init_threads();
    let mut rng_init = ChaCha8Rng::seed_from_u64(11);
    let mut m = SacMachinery::new(4, 2, &[64, 64], &[64, 64],
        SacConfig { gamma: 0.99, tau: 0.005, lr: 3e-4, target_entropy: -2.0 }, &mut rng_init);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = 128;
    let batch = SacBatch {
        obs: Mat::from_fn(b, 4, |i, j| ((i * 3 + j) % 17) as f64 * 0.1 - 0.8),
        action: Mat::from_fn(b, 2, |i, j| ((i + j) % 5) as f64 * 0.3 - 0.6),
        reward: (0..b).map(|i| (i % 9) as f64 * 0.2).collect(),
        next_obs: Mat::from_fn(b, 4, |i, j| ((i * 5 + j) % 13) as f64 * 0.1 - 0.6),
    };
    // warmup
    for _ in 0..50 { m.update(&batch, &mut rng).unwrap(); }
    let t0 = Instant::now();
    let n = 500;
    for _ in 0..n { m.update(&batch, &mut rng).unwrap(); }
    println!("sac update: {:.3} ms", t0.elapsed().as_secs_f64() * 1e3 / n as f64);

    // raw forward for comparison
    let x = Mat::from_fn(b, 6, |i, j| ((i + j) % 7) as f64 * 0.1);
    let net = &m.q1;
    let t1 = Instant::now();
    for _ in 0..2000 { let _ = net.forward_batch(&x); }
    println!("q fwd 128: {:.4} ms", t1.elapsed().as_secs_f64() * 1e3 / 2000.0);
    let _ = rng.gen_range(0..2);
}
