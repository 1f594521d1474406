//! Minimal dense-tensor arithmetic with reverse-mode autodiff.
//!
//! 32-bit floats throughout, row-major layout, a dynamic record-then-reverse
//! tape, and exactly the primitives the detector and its losses need. No
//! GPU, no fusion passes, no broadcasting beyond scalar-with-tensor.

mod gradcheck;
pub mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckEntry, GradCheckReport};
pub use tape::Tape;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::param(shape, data).unwrap()
    }

    /// Central finite differences of a scalar-valued function of one tensor,
    /// independent of the tape (the oracle for the backward rules).
    fn finite_diff(f: &mut dyn FnMut() -> f64, x: &Tensor, h: f32) -> Vec<f32> {
        let mut out = vec![0.0f32; x.len()];
        for i in 0..x.len() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let up = f();
            x.data_mut()[i] = orig - h;
            let down = f();
            x.data_mut()[i] = orig;
            out[i] = ((up - down) / ((orig + h) as f64 - (orig - h) as f64)) as f32;
        }
        out
    }

    fn assert_close(got: &[f32], want: &[f32], tol: f32) {
        assert_eq!(got.len(), want.len());
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            assert!(
                (g - w).abs() <= tol,
                "index {i}: got {g}, want {w} (tol {tol})"
            );
        }
    }

    // ---- matmul --------------------------------------------------------

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = tape.matmul(&eye, &x).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_value() {
        let tape = Tape::new();
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        let y = tape.matmul(&a, &b).unwrap();
        assert_eq!(y.to_vec(), vec![11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let tape = Tape::new();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(tape.matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let tape = Tape::new();
        let loss = tape.sum(&tape.matmul(&a, &b).unwrap()).unwrap();
        tape.backward(&loss).unwrap();

        let mut f = || {
            let t = Tape::new();
            t.sum(&t.matmul(&a, &b).unwrap()).unwrap().item() as f64
        };
        let fd_a = finite_diff(&mut f, &a, 1e-3);
        let fd_b = finite_diff(&mut f, &b, 1e-3);
        assert_close(&a.grad().unwrap(), &fd_a, 1e-3);
        assert_close(&b.grad().unwrap(), &fd_b, 1e-3);
    }

    // ---- causal conv -----------------------------------------------------

    #[test]
    fn conv_k1_identity() {
        let tape = Tape::new();
        let x = Tensor::new(&[3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        let k = Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap();
        let y = tape.causal_conv1d(&x, &k).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn conv_hand_value() {
        // x=[1,2,3], kernel=[1,1]: out[t] = x[t-1] + x[t] with x[-1]=0
        let tape = Tape::new();
        let x = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let k = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        let y = tape.causal_conv1d(&x, &k).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn conv_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = rand_tensor(&mut rng, &[8, 3]);
            let k = rand_tensor(&mut rng, &[4, 3]);
            let tape = Tape::new();
            let y = tape.causal_conv1d(&x, &k).unwrap().to_vec();
            // perturb a frame; outputs strictly before it must not move
            let t_hit = rng.gen_range(1..8usize);
            x.data_mut()[t_hit * 3] += 10.0;
            let tape2 = Tape::new();
            let y2 = tape2.causal_conv1d(&x, &k).unwrap().to_vec();
            for t in 0..t_hit {
                for j in 0..3 {
                    assert_eq!(y[t * 3 + j], y2[t * 3 + j]);
                }
            }
        }
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[6, 2]);
        let k = rand_tensor(&mut rng, &[3, 2]);
        let tape = Tape::new();
        // square so the x-gradient is input-dependent
        let y = tape.causal_conv1d(&x, &k).unwrap();
        let loss = tape.sum(&tape.mul(&y, &y).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        let mut f = || {
            let t = Tape::new();
            let y = t.causal_conv1d(&x, &k).unwrap();
            t.sum(&t.mul(&y, &y).unwrap()).unwrap().item() as f64
        };
        let fd_x = finite_diff(&mut f, &x, 1e-3);
        let fd_k = finite_diff(&mut f, &k, 1e-3);
        assert_close(&x.grad().unwrap(), &fd_x, 2e-2);
        assert_close(&k.grad().unwrap(), &fd_k, 2e-2);
    }

    // ---- elementwise -----------------------------------------------------

    #[test]
    fn elementwise_known_values() {
        let tape = Tape::new();
        let x = Tensor::new(&[3], vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(tape.sigmoid(&x).unwrap().to_vec()[0], 0.5);
        assert_eq!(tape.silu(&x).unwrap().to_vec()[0], 0.0);
        let sp = tape.softplus(&x).unwrap().to_vec();
        assert!((sp[2] - 1.313_261_7).abs() < 1e-6);
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::new();
        let x = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        assert!(tape.log(&x).is_err());
        let x = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        assert!(tape.log(&x).is_err());
    }

    // ---- softmax ---------------------------------------------------------

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let tape = Tape::new();
        let x = Tensor::new(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let p = tape.softmax_rows(&x).unwrap().to_vec();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let tape = Tape::new();
        let x = Tensor::new(&[3], vec![1000.0, 0.0, 0.0]).unwrap();
        let p = tape.softmax_rows(&x).unwrap().to_vec();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-6);
        assert!(p[1].abs() < 1e-6 && p[2].abs() < 1e-6);
    }

    #[test]
    fn softmax_hand_value() {
        let tape = Tape::new();
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = tape.softmax_rows(&x).unwrap().to_vec();
        assert_close(&p, &[0.090_030_57, 0.244_728_47, 0.665_240_96], 1e-5);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = rand_tensor(&mut rng, &[4, 5]);
            let tape = Tape::new();
            let p = tape.softmax_rows(&x).unwrap();
            for row in p.to_vec().chunks_exact(5) {
                let s: f32 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    // ---- backward ---------------------------------------------------------

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::param(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let tape = Tape::new();
        let loss = tape.sum(&x).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_2x() {
        let x = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let tape = Tape::new();
        let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        assert_close(&x.grad().unwrap(), &[2.0, -4.0, 1.0], 1e-6);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let tape = Tape::new();
        let y = tape.mul(&x, &x).unwrap();
        assert!(tape.backward(&y).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let tape = Tape::new();
        let loss = tape.sum(&x).unwrap();
        tape.backward(&loss).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_is_deterministic_after_zeroing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_tensor(&mut rng, &[5, 4]);
        let w = rand_tensor(&mut rng, &[4, 3]);
        let tape = Tape::new();
        let y = tape.silu(&tape.matmul(&x, &w).unwrap()).unwrap();
        let loss = tape.mean(&tape.mul(&y, &y).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        let g1 = (x.grad().unwrap(), w.grad().unwrap());
        x.zero_grad();
        w.zero_grad();
        tape.backward(&loss).unwrap();
        let g2 = (x.grad().unwrap(), w.grad().unwrap());
        assert_eq!(g1, g2, "two backward passes must be bit-identical");
    }

    // ---- per-primitive finite-difference sweep ---------------------------

    #[test]
    fn every_primitive_gradient_matches_finite_differences() {
        // sum(op(...)) through each registered primitive, many seeds
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[3, 4]);
            let w = rand_tensor(&mut rng, &[4, 4]);
            let gamma = rand_tensor(&mut rng, &[4]);
            let beta = rand_tensor(&mut rng, &[4]);
            let kern = rand_tensor(&mut rng, &[2, 4]);
            let idx = vec![0usize, 3, 1];

            let build = |tape: &Tape| -> Tensor {
                let a = tape.matmul(&x, &w).unwrap();
                let b = tape.causal_conv1d(&a, &kern).unwrap();
                let c = tape.layer_norm(&b, &gamma, &beta, 1e-5).unwrap();
                let d = tape.silu(&c).unwrap();
                let e = tape.softmax_rows(&d).unwrap();
                let f = tape.gather_rows(&e, &idx).unwrap();
                let g = tape.powf(&tape.add_scalar(&f, 1.0).unwrap(), 2.0).unwrap();
                let h = tape.log(&g).unwrap();
                let i = tape.softplus(&tape.sigmoid(&h).unwrap()).unwrap();
                let j = tape.exp(&tape.scale(&i, 0.1).unwrap()).unwrap();
                tape.mean(&j).unwrap()
            };

            let tape = Tape::new();
            let loss = build(&tape);
            tape.backward(&loss).unwrap();

            let params = [
                ("x".to_string(), x.clone()),
                ("w".to_string(), w.clone()),
                ("gamma".to_string(), gamma.clone()),
                ("beta".to_string(), beta.clone()),
                ("kern".to_string(), kern.clone()),
            ];
            let mut f = || {
                let t = Tape::new();
                build(&t).item() as f64
            };
            let report = grad_check(&mut f, &params, &GradCheckConfig::default());
            assert!(
                report.passed(),
                "seed {seed}: worst {:?}",
                report.worst()
            );
        }
    }

    #[test]
    fn scan_gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = 6;
            let d = 3;
            let n = 2;
            let delta_raw = rand_tensor(&mut rng, &[t, d]);
            let a_log = rand_tensor(&mut rng, &[d, n]);
            let b = rand_tensor(&mut rng, &[t, n]);
            let c = rand_tensor(&mut rng, &[t, n]);
            let x = rand_tensor(&mut rng, &[t, d]);

            let build = |tape: &Tape| -> Tensor {
                let delta = tape.softplus(&delta_raw).unwrap();
                let y = tape.selective_scan(&delta, &a_log, &b, &c, &x).unwrap();
                tape.sum(&tape.mul(&y, &y).unwrap()).unwrap()
            };
            let tape = Tape::new();
            let loss = build(&tape);
            tape.backward(&loss).unwrap();
            let params = [
                ("delta_raw".to_string(), delta_raw.clone()),
                ("a_log".to_string(), a_log.clone()),
                ("b".to_string(), b.clone()),
                ("c".to_string(), c.clone()),
                ("x".to_string(), x.clone()),
            ];
            let mut f = || {
                let t = Tape::new();
                build(&t).item() as f64
            };
            let report = grad_check(&mut f, &params, &GradCheckConfig::default());
            assert!(report.passed(), "seed {seed}: worst {:?}", report.worst());
        }
    }

    // ---- grad_check itself -------------------------------------------------

    #[test]
    fn grad_check_quadratic_is_essentially_exact() {
        // x±h exactly representable: FD of a quadratic has zero error
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let tape = Tape::new();
        let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        let params = [("x".to_string(), x.clone())];
        let mut f = || {
            let t = Tape::new();
            t.sum(&t.mul(&x, &x).unwrap()).unwrap().item() as f64
        };
        let cfg = GradCheckConfig {
            step: 0.000_976_562_5, // 2^-10
            ..Default::default()
        };
        let report = grad_check(&mut f, &params, &cfg);
        assert!(report.max_rel_err() <= 1e-8, "err {}", report.max_rel_err());
    }

    #[test]
    fn grad_check_detects_corrupted_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[4]);
        let tape = Tape::new();
        let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        // corrupt the stored gradient as a stand-in for a wrong backward rule
        x.with_grad_mut(|g| {
            for v in g.iter_mut() {
                *v *= 2.0;
            }
        });
        let params = [("x".to_string(), x.clone())];
        let mut f = || {
            let t = Tape::new();
            t.sum(&t.mul(&x, &x).unwrap()).unwrap().item() as f64
        };
        let report = grad_check(&mut f, &params, &GradCheckConfig::default());
        assert!(!report.passed());
    }

    #[test]
    fn grad_check_sampling_caps_entries() {
        let x = Tensor::param(&[10], vec![1.0; 10]).unwrap();
        let tape = Tape::new();
        let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        let params = [("x".to_string(), x.clone())];
        let mut f = || {
            let t = Tape::new();
            t.sum(&t.mul(&x, &x).unwrap()).unwrap().item() as f64
        };
        let cfg = GradCheckConfig {
            max_entries_per_tensor: Some(4),
            ..Default::default()
        };
        let report = grad_check(&mut f, &params, &cfg);
        assert_eq!(report.per_tensor[0].entries_checked, 4);
        assert!(report.passed());
    }
}
