use lmu_core::dn::{delay_network, shared_kernels};
use lmu_core::layers::{ExecMode, Layer, LmuFitConfig, LmuFitLayer};
use lmu_core::lti::{check_equivalence, conv_fft, final_state, scan_sequential, SequenceBatch};
use lmu_core::numerics::SeededRng;
use proptest::prelude::*;

fn random_batch(seed: u64, batch: usize, n: usize, channels: usize) -> SequenceBatch {
    let mut rng = SeededRng::new(seed);
    SequenceBatch::from_fn(batch, n, channels, |_, _, _| rng.gaussian())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn execution_paths_agree(
        batch in 1usize..=4,
        d in 1usize..=32,
        du in 1usize..=8,
        n in 1usize..=300,
        theta in 1.0f64..400.0,
        seed in any::<u64>(),
    ) {
        let (sys, h) = shared_kernels().get(d, theta, n).unwrap();
        let u = random_batch(seed, batch, n, du);
        let eq = check_equivalence(&sys, &h, &u).unwrap();
        prop_assert!(eq.max() <= 1e-9, "{eq:?}");
    }

    #[test]
    fn memory_is_linear_in_the_input(
        d in 1usize..=16,
        n in 1usize..=128,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let (_, h) = shared_kernels().get(d, 32.0, n).unwrap();
        let u = random_batch(seed, 2, n, 2);
        let v = random_batch(seed ^ 0x55, 2, n, 2);
        let combo = u.lin_comb(a, &v, b).unwrap();
        let mu = conv_fft(&h, &u).unwrap();
        let mv = conv_fft(&h, &v).unwrap();
        let mc = conv_fft(&h, &combo).unwrap();
        let scale = 1.0 + a.abs() + b.abs();
        for bi in 0..2 {
            for t in 0..n {
                let (x, y, z) = (mu.flat(bi, t), mv.flat(bi, t), mc.flat(bi, t));
                for k in 0..z.len() {
                    prop_assert!((a * x[k] + b * y[k] - z[k]).abs() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn final_state_is_the_last_scan_state(
        d in 1usize..=24,
        n in 1usize..=500,
        seed in any::<u64>(),
    ) {
        let sys = delay_network(d, 50.0).unwrap();
        let (_, h) = shared_kernels().get(d, 50.0, n).unwrap();
        let u = random_batch(seed, 1, n, 3);
        let last = scan_sequential(&sys, &u, None).unwrap().last();
        prop_assert!(final_state(&h, &u).unwrap().max_abs_diff(&last).unwrap() <= 1e-9);
    }

    #[test]
    fn layer_modes_agree(
        d in 1usize..=12,
        n in 1usize..=64,
        dx in 1usize..=3,
        du in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let cfg = LmuFitConfig::new(d, 20.0, dx, du, 4);
        let mut rng = SeededRng::new(seed);
        let mut layer = LmuFitLayer::new(cfg, &mut rng).unwrap();
        let x = random_batch(seed ^ 1, 2, n, dx);
        let mut outs = Vec::new();
        for mode in [ExecMode::Sequential, ExecMode::ParallelFull, ExecMode::ParallelFinal] {
            layer.set_mode(mode, false).unwrap();
            outs.push(layer.forward(&x).unwrap());
        }
        prop_assert!(outs[0].max_abs_diff(&outs[1]).unwrap() <= 1e-9);
        prop_assert!(outs[0].max_abs_diff(&outs[2]).unwrap() <= 1e-9);
    }
}
