use lisp_core::agent::collect::{collect, CollectPolicy};
use lisp_core::env::EnvKind;

fn main() {
    lisp_core::init_threads();
    let t0 = std::time::Instant::now();
    let buf = collect(EnvKind::PointMass, CollectPolicy::Sac, 40_000, 5, 1000, &[1.0]).unwrap();
    println!("collect took {:.1}s", t0.elapsed().as_secs_f64());
    for (lo, hi) in [(0, 5000), (10_000, 15_000), (25_000, 30_000), (35_000, 40_000)] {
        let slice: Vec<_> = (lo..hi).map(|i| buf.get(i)).collect();
        let alive = slice.iter().filter(|t| t.state[1] > 0.3).count() as f64 / slice.len() as f64;
        let mv: f64 = slice.iter().map(|t| t.state[2]).sum::<f64>() / slice.len() as f64;
        let mz: f64 = slice.iter().map(|t| t.state[1]).sum::<f64>() / slice.len() as f64;
        let mr: f64 = slice.iter().map(|t| t.reward).sum::<f64>() / slice.len() as f64;
        println!("[{lo}..{hi}] alive {alive:.2} mean_v {mv:.3} mean_z {mz:.3} mean_r {mr:.3}");
    }
}
