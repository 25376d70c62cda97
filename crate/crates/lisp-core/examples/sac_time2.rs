use lisp_core::mat::Mat;
use lisp_core::nn::{Mlp, Activation, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    lisp_core::init_threads();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = Mlp::new(&[6, 64, 64, 1], Activation::Relu, &mut rng);
    let x = Mat::from_fn(128, 6, |i, j| ((i + j) % 7) as f64 * 0.1);
    let y = Mat::from_fn(128, 1, |i, _| (i % 3) as f64);

    // critic-style tape: fwd + backward + grad extraction
    let reps = 1000;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (out, params) = q.on_tape(&mut tape, xv);
        let yv = tape.constant(y.clone());
        let e = tape.sub(out, yv);
        let s = tape.square(e);
        let loss = tape.mean_all(s);
        let mut grads = tape.backward(loss).unwrap();
        let _gm: Vec<Mat> = params.iter().map(|&p| tape.grad_of(&mut grads, p)).collect();
    }
    println!("one-net tape fwd+bwd: {:.3} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t1 = Instant::now();
    for _ in 0..reps { let _ = q.forward_batch(&x); }
    println!("plain fwd: {:.3} ms", t1.elapsed().as_secs_f64() * 1e3 / reps as f64);
}
