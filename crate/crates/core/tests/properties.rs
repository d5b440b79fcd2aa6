//! Property tests for the invariants each module promises.

use ltt_core::channel::{
    complex_normal, draw_rayleigh_matrix, mimo_equalize, pack_complex, rayleigh_equalize_with, svd, unpack_complex,
    CMatrix, ComplexVec,
};
use ltt_core::data_io::{
    encode_idx_images, encode_idx_labels, idx_to_dataset, parse_float, parse_idx_images, parse_idx_labels, read_csv,
    to_bytes, write_csv, Cell, IdxImages,
};
use ltt_core::flow_path::{marginal_field_gaussian, path_point, teacher_velocity, teacher_velocity_ratio};
use ltt_core::metrics::{delta_psnr, psnr_from_mse};
use ltt_core::ode_decoder::integrate;
use ltt_core::rng::{tags, Stream};
use ltt_core::scalar_bench::{ltt_gain, mmse_gain, mse_of_gain, scalar_field, ScalarModel};
use ltt_core::student_field::{from_json, to_json, FieldArchitecture, FieldParams};
use ltt_core::{DecodeConfig, NoiseSchedule, Solver, VelocityField};
use num_complex::Complex64;
use proptest::prelude::*;

fn schedule() -> impl Strategy<Value = NoiseSchedule> {
    (0.1f64..5.0).prop_map(NoiseSchedule::linear)
}

fn unit_t() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sigma_inverse_round_trips(sched in schedule(), t in unit_t()) {
        let s = sched.sigma(t).unwrap();
        prop_assert!((sched.sigma_inv(s).unwrap() - t).abs() <= 1e-12);
    }

    #[test]
    fn sigma_is_strictly_decreasing(sched in schedule(), a in unit_t(), b in unit_t()) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(sched.sigma(lo).unwrap() > sched.sigma(hi).unwrap());
    }

    #[test]
    fn reversed_landing_time_scales_with_amplitude(c in 0.01f64..1.0, snr in 0.0f64..30.0) {
        let sched = NoiseSchedule::linear(1.0);
        let k = 10f64.powf(-snr / 20.0);
        let base = 1.0 - sched.sigma_inv(c).unwrap();
        let scaled = 1.0 - sched.sigma_inv(c * k).unwrap();
        prop_assert!((scaled - base * k).abs() <= 1e-12);
    }

    #[test]
    fn path_reconstruction_is_exact(
        x1 in prop::collection::vec(-5.0f64..5.0, 1..8),
        seed in any::<u64>(),
        t in unit_t(),
        sched in schedule(),
    ) {
        let mut rng = Stream::new(seed, tags::PATH);
        let eps = rng.normal_vec(x1.len());
        let p = path_point(&x1, &eps, t, &sched).unwrap();
        let sigma = sched.sigma(t).unwrap();
        for i in 0..x1.len() {
            prop_assert_eq!(p.x_t[i], x1[i] + sigma * eps[i]);
        }
    }

    #[test]
    fn teacher_matches_ratio_form(
        x1 in prop::collection::vec(-5.0f64..5.0, 1..8),
        seed in any::<u64>(),
        t in 0.0f64..=0.999,
        sched in schedule(),
    ) {
        let mut rng = Stream::new(seed, tags::PATH);
        let eps = rng.normal_vec(x1.len());
        let p = path_point(&x1, &eps, t, &sched).unwrap();
        let u = teacher_velocity(&p, &sched).unwrap().u;
        let r = teacher_velocity_ratio(&p.x_t, &x1, t, &sched).unwrap();
        let diff = u.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = eps.iter().map(|e| e * e).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-9 * norm.max(1e-300), "{diff} vs {norm}");
    }

    #[test]
    fn mmse_gain_is_never_beaten(sx in 0.1f64..5.0, sc in 0.0f64..5.0, a in -3.0f64..3.0) {
        let m = ScalarModel::new(sx, sc).unwrap();
        let best = mse_of_gain(&m, mmse_gain(&m));
        prop_assert!(mse_of_gain(&m, a) >= best - 1e-12 * best.max(1.0));
        let ltt = mse_of_gain(&m, ltt_gain(&m));
        prop_assert!(ltt >= best - 1e-15);
        if sc > 1e-3 {
            prop_assert!(ltt > best);
        }
    }

    #[test]
    fn scalar_field_is_the_gaussian_marginal(
        sx in 0.1f64..3.0,
        sc in 0.01f64..0.9,
        x in -5.0f64..5.0,
        t in unit_t(),
    ) {
        let sched = NoiseSchedule::linear(1.0);
        let m = ScalarModel::new(sx, sc).unwrap();
        let a = scalar_field(x, t, &m, &sched).unwrap();
        let b = marginal_field_gaussian(&[x], t, &[0.0], sx, &sched).unwrap()[0];
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn psnr_falls_as_mse_rises(m1 in 1e-8f64..10.0, m2 in 1e-8f64..10.0) {
        prop_assume!(m1 < m2);
        prop_assert!(psnr_from_mse(m1, 1.0) > psnr_from_mse(m2, 1.0));
    }

    #[test]
    fn delta_psnr_is_antisymmetric(
        clean in prop::collection::vec(0.0f64..1.0, 4),
        d in prop::collection::vec(-0.3f64..0.3, 4),
        r in prop::collection::vec(-0.3f64..0.3, 4),
    ) {
        let dec: Vec<f64> = clean.iter().zip(&d).map(|(c, e)| c + e).collect();
        let rec: Vec<f64> = clean.iter().zip(&r).map(|(c, e)| c + e).collect();
        prop_assume!(d.iter().any(|&e| e != 0.0) && r.iter().any(|&e| e != 0.0));
        let a = delta_psnr(&clean, &dec, &rec, 1.0).unwrap();
        let b = delta_psnr(&clean, &rec, &dec, 1.0).unwrap();
        prop_assert!((a + b).abs() <= 1e-9);
    }

    #[test]
    fn idx_ingestion_is_lossless(rows in 1usize..6, cols in 1usize..6, count in 0usize..5, seed in any::<u64>()) {
        let mut rng = Stream::new(seed, tags::DATA);
        let pixels: Vec<u8> = (0..rows * cols * count).map(|_| rng.below(256) as u8).collect();
        let img = IdxImages { count, rows, cols, pixels: pixels.clone() };
        let parsed = parse_idx_images(&encode_idx_images(&img)).unwrap();
        prop_assert_eq!(&parsed, &img);
        let ds = idx_to_dataset(&parsed, "p");
        let back: Vec<u8> = ds.samples.iter().flat_map(|s| to_bytes(s)).collect();
        prop_assert_eq!(back, pixels);
        let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn packing_round_trips(x in prop::collection::vec(-10.0f64..10.0, 0..17)) {
        let z = pack_complex(&x);
        prop_assert_eq!(z.len(), x.len().div_ceil(2));
        prop_assert_eq!(unpack_complex(&z, x.len()).unwrap(), x);
    }

    #[test]
    fn svd_reconstructs_and_is_unitary(nr in 1usize..5, nt in 1usize..5, seed in any::<u64>()) {
        let mut rng = Stream::new(seed, tags::FADING);
        let h = draw_rayleigh_matrix(nr, nt, &mut rng);
        let d = svd(&h);
        prop_assert!(d.reconstruct().frobenius_distance(&h) <= 1e-10);
        let uu = d.u.adjoint().matmul(&d.u);
        let vv = d.v.adjoint().matmul(&d.v);
        prop_assert!(uu.frobenius_distance(&CMatrix::identity(uu.rows())) <= 1e-10);
        prop_assert!(vv.frobenius_distance(&CMatrix::identity(vv.rows())) <= 1e-10);
        prop_assert!(d.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(d.sigma.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn unitary_rotation_preserves_energy(n in 1usize..5, seed in any::<u64>()) {
        let mut rng = Stream::new(seed, tags::FADING);
        let h = draw_rayleigh_matrix(n, n, &mut rng);
        let u = svd(&h).u;
        let y: Vec<Complex64> = (0..n).map(|_| complex_normal(&mut rng)).collect();
        let e = |v: &[Complex64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!((e(&u.adjoint_mul_vec(&y)) - e(&y)).abs() <= 1e-10);
    }

    #[test]
    fn channel_reports_are_consistent(
        x in prop::collection::vec(0.0f64..1.0, 2..24),
        nr in 1usize..4,
        nt in 1usize..4,
        fast in any::<bool>(),
        debias in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let sched = NoiseSchedule::linear(1.0);
        let (sigma, lambda) = (0.05, 0.1);
        let z = pack_complex(&x);
        let mut rng = Stream::new(seed, tags::FADING);
        let uses = z.len().div_ceil(nt);
        let hs = ltt_core::channel::draw_mimo_channels(nr, nt, uses, fast, &mut rng);
        match mimo_equalize(&z, &hs, sigma, lambda, &sched, debias, &mut rng) {
            Ok(r) => prop_assert!(r.consistency_error(&sched).unwrap() <= 1e-12),
            Err(ltt_core::Error::Calibration { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn one_by_one_mimo_is_rayleigh(x in prop::collection::vec(0.0f64..1.0, 2..16), seed in any::<u64>(), debias in any::<bool>()) {
        let sched = NoiseSchedule::linear(1.0);
        let z = pack_complex(&x);
        let mut g = Stream::new(seed, tags::FADING);
        let h = complex_normal(&mut g);
        let mut r1 = Stream::new(seed, tags::CHANNEL);
        let mut r2 = Stream::new(seed, tags::CHANNEL);
        let a = rayleigh_equalize_with(&z, &[h], 0.1, 0.2, &sched, debias, &mut r1);
        let b = mimo_equalize(&z, &[CMatrix::from_rows(&[vec![h]])], 0.1, 0.2, &sched, debias, &mut r2);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.equalized, b.equalized);
                prop_assert_eq!(a.alpha, b.alpha);
                prop_assert_eq!(a.sigma_eff, b.sigma_eff);
                prop_assert_eq!(a.t_star, b.t_star);
            }
            (Err(_), Err(_)) => {}
            (a, b) => return Err(TestCaseError::fail(format!("{a:?} vs {b:?}"))),
        }
    }

    #[test]
    fn integration_is_a_pure_function(seed in any::<u64>(), steps in 1usize..12, t0 in 0.0f64..0.99, euler in any::<bool>()) {
        let arch = FieldArchitecture::new(3, vec![8], 2).unwrap();
        let mut f = FieldParams::init(arch, seed).unwrap();
        let mut rng = Stream::new(seed, tags::INIT);
        for l in f.layers_mut() {
            l.values_mut().for_each(|v| *v = 0.3 * rng.normal());
        }
        let x0 = rng.normal_vec(3);
        let solver = if euler { Solver::Euler } else { Solver::Midpoint };
        let cfg = DecodeConfig::new(solver, steps, t0).unwrap();
        let a = integrate(&f, &x0, &cfg).unwrap();
        let b = integrate(&f.clone(), &x0, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_json_round_trips(seed in any::<u64>(), hidden in prop::collection::vec(1usize..6, 1..3)) {
        let arch = FieldArchitecture::new(2, hidden, 2).unwrap();
        let mut f = FieldParams::init(arch, seed).unwrap();
        let mut rng = Stream::new(seed, tags::INIT);
        for l in f.layers_mut() {
            l.values_mut().for_each(|v| *v = rng.normal() * 10f64.powi(rng.below(20) as i32 - 10));
        }
        let back = from_json(&to_json(&f)).unwrap();
        prop_assert_eq!(back.parameters(), f.parameters());
        prop_assert_eq!(back.velocity(&[0.1, 0.2], 0.5).unwrap(), f.velocity(&[0.1, 0.2], 0.5).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trips_every_float(values in prop::collection::vec(any::<f64>(), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let rows: Vec<Vec<Cell>> = values.iter().map(|&v| vec![Cell::Float(v)]).collect();
        write_csv(&path, &["v"], &rows).unwrap();
        let (_, back) = read_csv(&path).unwrap();
        for (v, row) in values.iter().zip(&back) {
            let w = parse_float(&row[0]).unwrap();
            prop_assert!(v.to_bits() == w.to_bits() || (v.is_nan() && w.is_nan()), "{v} -> {w}");
        }
    }
}

#[test]
fn complex_vec_energy_matches_interleaved_norm() {
    let x = [0.3, -0.4, 1.2];
    let z: ComplexVec = pack_complex(&x);
    let e: f64 = z.to_interleaved().iter().map(|v| v * v).sum();
    assert!((z.energy() - e).abs() < 1e-15);
}
