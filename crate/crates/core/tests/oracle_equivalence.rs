use dfast_core::autograd::Tape;
use dfast_core::tensor::{sparse_scores, Tensor};
use dfast_core::train::{binary_auroc, ovo_auroc};
use dfast_oracle::{naive_conv, naive_topk_mask, pairwise_auroc, OracleError, OracleResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

#[test]
fn grouped_conv_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = 0;
    while cases < 200 {
        let groups = rng.gen_range(1..=3);
        let cg = rng.gen_range(1..=3);
        let cin = groups * cg;
        let cout = groups * rng.gen_range(1..=3);
        let (h, w) = (rng.gen_range(1..=5), rng.gen_range(1..=12));
        let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=5));
        let (ph, pw) = (rng.gen_range(0..kh), rng.gen_range(0..kw));
        if h + 2 * ph < kh || w + 2 * pw < kw {
            continue;
        }
        let b = rng.gen_range(1..=2);
        let x = random_vec(&mut rng, b * cin * h * w);
        let k = random_vec(&mut rng, cout * cg * kh * kw);
        let (reference, shape) = match naive_conv(&x, [b, cin, h, w], &k, [cout, cg, kh, kw], groups, (ph, pw)) {
            Ok(r) => r,
            Err(OracleError::TooLarge { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::new(&[b, cin, h, w], x).unwrap());
        let kv = tape.constant(Tensor::new(&[cout, cg, kh, kw], k).unwrap());
        let y = tape.conv2d(xv, kv, groups, (ph, pw)).unwrap();
        assert_eq!(tape.shape(y), shape);
        let r = OracleResult::compare(reference, tape.value(y).data(), 1e-5);
        assert!(r.pass, "case {cases}: worst {}", r.worst);
        cases += 1;
    }
}

#[test]
fn conv_small_geometries_exhaustive() {
    // Narrow inputs with wide padded kernels leave some taps touching only padding.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for h in 1..=3 {
        for w in 1..=3 {
            for kh in 1..=4 {
                for kw in 1..=5 {
                    for ph in 0..kh {
                        for pw in 0..kw {
                            if h + 2 * ph < kh || w + 2 * pw < kw {
                                continue;
                            }
                            let x = random_vec(&mut rng, 2 * h * w);
                            let k = random_vec(&mut rng, 2 * kh * kw);
                            let (reference, _) = naive_conv(&x, [1, 2, h, w], &k, [2, 1, kh, kw], 2, (ph, pw)).unwrap();
                            let mut tape = Tape::<f64>::new();
                            let xv = tape.constant(Tensor::new(&[1, 2, h, w], x).unwrap());
                            let kv = tape.constant(Tensor::new(&[2, 1, kh, kw], k).unwrap());
                            let y = tape.conv2d(xv, kv, 2, (ph, pw)).unwrap();
                            let r = OracleResult::compare(reference, tape.value(y).data(), 1e-12);
                            assert!(r.pass, "h{h} w{w} k{kh}x{kw} pad ({ph},{pw}): worst {}", r.worst);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn binary_auroc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..1000 {
        let np = rng.gen_range(1..=20);
        let nn = rng.gen_range(1..=20);
        // coarse scores force plenty of ties
        let levels = rng.gen_range(2..=10);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect() };
        let pos = draw(np);
        let neg = draw(nn);
        let want = pairwise_auroc(&pos, &neg).unwrap();
        let got = binary_auroc(&pos, &neg).unwrap();
        assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
fn ovo_auroc_matches_pairwise_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..200 {
        let classes = rng.gen_range(2..=4);
        let n = rng.gen_range(classes..=30);
        let mut labels: Vec<usize> = (0..n).map(|i| if i < classes { i } else { rng.gen_range(0..classes) }).collect();
        labels.rotate_left(rng.gen_range(0..n));
        let scores: Vec<f64> = (0..n * classes).map(|_| rng.gen_range(0..6) as f64 / 6.0).collect();
        let col = |c: usize, of: usize| -> Vec<f64> { (0..n).filter(|&i| labels[i] == of).map(|i| scores[i * classes + c]).collect() };
        let mut total = 0.0;
        for i in 0..classes {
            for j in i + 1..classes {
                let a_ij = pairwise_auroc(&col(i, i), &col(i, j)).unwrap();
                let a_ji = pairwise_auroc(&col(j, j), &col(j, i)).unwrap();
                total += (a_ij + a_ji) / 2.0;
            }
        }
        let want = total / (classes * (classes - 1) / 2) as f64;
        let got = ovo_auroc(&scores, classes, &labels).unwrap();
        assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
fn topk_sparsification_matches_sorting() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..1000 {
        let n = rng.gen_range(1..=40);
        let tau = rng.gen_range(1..=10) as f64 / 10.0;
        let row: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.gen_range(0..4) as f64).collect()
        } else {
            random_vec(&mut rng, n)
        };
        let t = Tensor::new(&[1, n], row.clone()).unwrap();
        let got = sparse_scores(&t, tau).unwrap();
        let r = OracleResult::exact(naive_topk_mask(&row, tau), got.data());
        assert!(r.pass, "case {case}: n {n} tau {tau}");
    }
}
