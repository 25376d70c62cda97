use lisp_core::mat::Mat;
use std::time::Instant;

fn bench(name: &str, r: usize, k: usize, c: usize, iters: usize) {
    let a = Mat::from_fn(r, k, |i, j| ((i * 7 + j * 3) % 13) as f64 * 0.1 - 0.5);
    let b = Mat::from_fn(k, c, |i, j| ((i * 5 + j * 11) % 17) as f64 * 0.1 - 0.7);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..iters {
        let c_m = a.matmul(&b);
        acc += c_m.get(0, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gflops = (2.0 * r as f64 * k as f64 * c as f64 * iters as f64) / dt / 1e9;
    println!("{name}: {:.3} ms/call, {gflops:.2} GFLOP/s (acc {acc:.1})", dt * 1e3 / iters as f64);
}

fn main() {
    lisp_core::init_threads();
    bench("128x68x64", 128, 68, 64, 2000);
    bench("128x64x64", 128, 64, 64, 2000);
    bench("128x64x4", 128, 64, 4, 2000);
    bench("512x68x64", 512, 68, 64, 500);
    bench("2048x10x64", 2048, 10, 64, 500);
}
