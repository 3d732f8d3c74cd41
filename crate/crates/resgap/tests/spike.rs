use num_complex::Complex64 as C64;
use resgap::quantum::lapack::eig_dense;
use rustfft::FftPlanner;
use std::time::Instant;

#[test]
#[ignore] // timing probe, run explicitly
fn spike_zgeev_timing() {
    for &n in &[512usize, 1024, 2048] {
        let mut a = vec![C64::default(); n * n];
        let mut s = 1234567u64;
        for v in a.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let y = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            *v = C64::new(x, y);
        }
        let t0 = Instant::now();
        let (w, _) = eig_dense(&mut a, n, true).expect("eig failed");
        println!("zgeev n={} with vectors: {:.2} s", n, t0.elapsed().as_secs_f64());
        assert_eq!(w.len(), n);
    }
}

#[test]
fn spike_fft_roundtrip() {
    let n = 2048usize;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let orig: Vec<C64> = (0..n)
        .map(|i| C64::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
        .collect();
    let mut buf = orig.clone();
    fwd.process(&mut buf);
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    let err: f64 = buf
        .iter()
        .zip(&orig)
        .map(|(a, b)| (a * scale - b).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-12, "fft roundtrip error {}", err);
}
