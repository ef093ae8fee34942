use proptest::prelude::*;

use bandmf::accounting::{
    calibrate_amplified, default_orders, eps_of, build_amplified_event, loss_from_encoder, rdp_curve, sweep_bands,
    AccountingEvent, AmplifiedSetup, PrivacyBudget, Sampling, SweepFactor, SweepSetup,
};
use bandmf::gram::{banded_cholesky, factor_residual};
use bandmf::io::{read_bmf, write_bmf, StoredMatrix};
use bandmf::noise::NoiseStream;
use bandmf::optimizer::{banded_loss_and_grad, loss, optimize_banded, OptimizerConfig};
use bandmf::sensitivity::{max_participations, sens_bruteforce, sens_minsep_banded, sens_minsep_general};
use bandmf::workload::{prefix_workload, sgdm_workload};
use bandmf::{BandedLowerTriangular, DenseMatrix, Execution, GramMatrix, ParticipationSchema};

/// `(n, bands, entries)` of a lower-triangular banded encoder with a
/// diagonal bounded away from zero.
fn encoder(max_n: usize) -> impl Strategy<Value = BandedLowerTriangular> {
    (1..=max_n)
        .prop_flat_map(|n| (Just(n), 1..=n))
        .prop_flat_map(|(n, b)| (Just(n), Just(b), prop::collection::vec(-1.0..1.0f64, n * b)))
        .prop_map(|(n, b, vals)| {
            let mut c = BandedLowerTriangular::zeros(n, b).unwrap();
            for i in 0..n {
                for j in c.row_start(i)..=i {
                    let v = vals[i * b + (i - j)];
                    c.set(i, j, if i == j { 1.0 + v.abs() } else { 0.5 * v / b as f64 });
                }
            }
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bmf_round_trip(c in encoder(20)) {
        let mut buf = Vec::new();
        write_bmf(&mut buf, &StoredMatrix::Banded(c.clone())).unwrap();
        prop_assert_eq!(read_bmf(&buf[..]).unwrap(), StoredMatrix::Banded(c.clone()));
        buf.clear();
        let dense = c.to_dense();
        write_bmf(&mut buf, &StoredMatrix::Dense(dense.clone())).unwrap();
        prop_assert_eq!(read_bmf(&buf[..]).unwrap(), StoredMatrix::Dense(dense));
    }

    #[test]
    fn streams_match_dense(c in encoder(40), seed in any::<u64>()) {
        let n = c.n();
        let x: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 17) as f64) - 8.0).collect();
        let want = c.to_dense().matvec(&x).unwrap();
        let mut fwd = c.matvec_stream();
        let y: Vec<f64> = x.iter().map(|&v| fwd.push(v).unwrap()).collect();
        for (a, b) in y.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let back = c.inv_matvec(&y).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-10 * 8.0);
        }
    }

    #[test]
    fn cholesky_round_trip(c in encoder(40)) {
        let x = c.gram();
        let back = banded_cholesky(&x).unwrap();
        prop_assert_eq!(back.bands(), c.bands());
        prop_assert!(factor_residual(&back, &x) <= 1e-12 * x.values().max_abs());
    }

    #[test]
    fn banded_sensitivity_matches_bruteforce(c in encoder(12), b_extra in 0usize..3, k_pick in 0usize..100) {
        let n = c.n();
        let b = (c.bands() + b_extra).min(n);
        let k_cap = 1 + k_pick % max_participations(n, b);
        let x = c.gram();
        let fast = sens_minsep_banded(&x, b, k_cap).unwrap().value;
        let brute = sens_bruteforce(&x, b, k_cap).unwrap();
        prop_assert!((fast - brute).abs() <= 1e-12, "{fast} vs {brute}");
    }

    #[test]
    fn general_bound_is_sound(c in encoder(10), b in 1usize..4, k_pick in 0usize..100) {
        let n = c.n();
        let b = b.min(n);
        let k_cap = 1 + k_pick % max_participations(n, b);
        let x = c.gram();
        let bound = sens_minsep_general(&x, b, k_cap, Execution::Sequential).unwrap().value;
        prop_assert!(bound >= sens_bruteforce(&x, b, k_cap).unwrap() * (1.0 - 1e-12));
    }

    #[test]
    fn execution_modes_agree_bitwise(c in encoder(48)) {
        let n = c.n();
        let w = prefix_workload(n).unwrap();
        let x = c.gram();
        let seq = banded_loss_and_grad(&w, &x, Execution::Sequential).unwrap();
        let par = banded_loss_and_grad(&w, &x, Execution::Parallel).unwrap();
        prop_assert_eq!(seq.0.to_bits(), par.0.to_bits());
        prop_assert_eq!(seq.1, par.1);
        let b = c.bands();
        let k = max_participations(n, b);
        prop_assert_eq!(
            sens_minsep_general(&x, b, k, Execution::Sequential).unwrap(),
            sens_minsep_general(&x, b, k, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn calibration_round_trip(q_pick in 1usize..50, count in 1usize..200, eps in 0.1f64..8.0) {
        let setup = AmplifiedSetup { n: count, m: 1000, batch: q_pick, bands: 1, sampling: Sampling::Poisson };
        let budget = PrivacyBudget::Approx { epsilon: eps, delta: 1e-6 };
        let orders = default_orders();
        let s = calibrate_amplified(&setup, &budget, &orders).unwrap();
        let spent = eps_of(&build_amplified_event(&setup, s).unwrap(), 1e-6, &orders).unwrap();
        prop_assert!(spent <= eps * (1.0 + 1e-9), "{spent} > {eps}");
        prop_assert!(spent >= eps * (1.0 - 1e-3) || s == bandmf::accounting::SIGMA_MIN, "{spent} << {eps}");
    }

    #[test]
    fn sampling_never_hurts(q in 0.0001f64..1.0, sigma in 0.3f64..10.0) {
        let orders = default_orders();
        let sampled = rdp_curve(&AccountingEvent::poisson(q, AccountingEvent::gaussian(sigma)), &orders).unwrap();
        let full = rdp_curve(&AccountingEvent::gaussian(sigma), &orders).unwrap();
        for (a, b) in sampled.iter().zip(&full) {
            prop_assert!(*a <= b * (1.0 + 1e-12));
        }
    }

    #[test]
    fn noise_is_seed_determined(c in encoder(16), seed in any::<u64>(), dim in 1usize..4) {
        let run = || {
            let mut s = NoiseStream::new(c.clone(), 1.0, dim, seed).unwrap();
            (0..c.n()).flat_map(|_| s.next_noise_row().unwrap()).collect::<Vec<f64>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn loss_is_convex_on_midpoints(a in encoder(8), seed in any::<u64>()) {
        let n = a.n();
        let w = prefix_workload(n).unwrap();
        let other = {
            let mut c = BandedLowerTriangular::zeros(n, n).unwrap();
            for i in 0..n {
                for j in 0..=i {
                    let h = seed.wrapping_mul(6364136223846793005).wrapping_add((i * n + j) as u64) >> 40;
                    c.set(i, j, if i == j { 1.5 } else { (h % 100) as f64 / 400.0 });
                }
            }
            c.gram()
        };
        let x = a.gram();
        let mid = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (x.get(i, j) + other.get(i, j)));
        let mid = GramMatrix::new(mid).unwrap();
        let (fx, fo, fm) = (loss(w.t(), &x).unwrap(), loss(w.t(), &other).unwrap(), loss(w.t(), &mid).unwrap());
        prop_assert!(fm <= 0.5 * (fx + fo) * (1.0 + 1e-12));
    }
}

#[test]
fn prefix_closed_form_matches_dense() {
    for n in [1usize, 2, 17, 256] {
        let w = prefix_workload(n).unwrap();
        let dense = w.a().gram(Execution::Sequential);
        assert!(w.t().max_abs_diff(&dense) <= 1e-12);
        assert_eq!(w.t()[(0, 0)], n as f64);
    }
}

#[test]
fn sgdm_without_momentum_is_prefix() {
    let n = 30;
    let sgdm = sgdm_workload(0.0, &vec![1.0; n], Execution::default()).unwrap();
    let prefix = prefix_workload(n).unwrap();
    assert_eq!(sgdm.a(), prefix.a());
    assert_eq!(sgdm.t(), prefix.t());
}

#[test]
fn sweep_total_error_recomputes_from_encoder() {
    let n = 32;
    let w = prefix_workload(n).unwrap();
    let cfg = OptimizerConfig::default();
    let setup = SweepSetup { n, m: 64, batch: 4 };
    let budget = PrivacyBudget::Approx { epsilon: 2.0, delta: 1e-6 };
    let grid = [1usize, 2, 4, 8, 16, 32];
    let factor = |b: usize| {
        let r = optimize_banded(&w, b, &cfg, ParticipationSchema::Single)?;
        Ok(SweepFactor { x: r.x, c: r.c, loss: r.loss })
    };
    let table = sweep_bands(&w, &setup, &budget, &grid, &default_orders(), Execution::default(), factor).unwrap();
    assert!(table.best.is_some());
    for row in &table.rows {
        let f = factor(row.bands).unwrap();
        let sigma = row.noise_multiplier.unwrap() * row.sensitivity.unwrap();
        let recomputed = sigma * sigma * loss_from_encoder(&w, &f.c, Execution::Sequential).unwrap();
        let got = row.total_error.unwrap();
        assert!((got - recomputed).abs() <= 1e-9 * recomputed, "b̂={}: {got} vs {recomputed}", row.bands);
        // band counts above m / B = 16 lose amplification
        assert_eq!(row.amplified, row.bands <= 16);
    }
}
