//! Finite-difference checks of every primitive at random shapes up to 5,
//! plus the tape's algebraic invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorlab::{grad_check, GradCheckConfig, ParamId, ParamStore, Tape, TensorError, Var};

type Fwd = Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>, &[ParamId]) -> Result<Var, TensorError>>;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Reduces an arbitrary output to a scalar with fixed random weights so that
/// every output coordinate contributes a distinct gradient.
fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.shape(y).to_vec();
    let n = t.value(y).len();
    let w = t.constant(&shape, rand_vec(&mut rng, n))?;
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn check(name: &str, shapes: &[Vec<usize>], seed: u64, f: Fwd) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n = s.iter().product();
            store.add(format!("in{i}"), s, rand_vec(&mut rng, n)).unwrap()
        })
        .collect();
    let report = grad_check::<TensorError, _>(
        &mut store,
        |t, s| {
            let y = f(t, s, &ids)?;
            weighted_sum(t, y, seed ^ 0xabc)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(
        report.max_rel_error < 1e-4,
        "{name} {shapes:?}: {report:?}"
    );
}

fn dims(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=5)
}

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, m, k, n) = (dims(&mut rng), dims(&mut rng), dims(&mut rng), dims(&mut rng));

        check("matmul", &[vec![b, m, k], vec![k, n]], seed, Box::new(|t, s, p| {
            let (a, w) = (t.param(s, p[0]), t.param(s, p[1]));
            t.matmul(a, w, false)
        }));
        check("matmul_t", &[vec![m, k], vec![n, k]], seed, Box::new(|t, s, p| {
            let (a, w) = (t.param(s, p[0]), t.param(s, p[1]));
            t.matmul(a, w, true)
        }));
        check("bmm", &[vec![b, m, k], vec![b, k, n]], seed, Box::new(|t, s, p| {
            let (a, c) = (t.param(s, p[0]), t.param(s, p[1]));
            t.bmm(a, c, false)
        }));
        check("bmm_t", &[vec![b, m, k], vec![b, n, k]], seed, Box::new(|t, s, p| {
            let (a, c) = (t.param(s, p[0]), t.param(s, p[1]));
            t.bmm(a, c, true)
        }));
        check("add", &[vec![m, n], vec![m, n]], seed, Box::new(|t, s, p| {
            let (a, c) = (t.param(s, p[0]), t.param(s, p[1]));
            t.add(a, c)
        }));
        check("add_bias", &[vec![b, m, n], vec![n]], seed, Box::new(|t, s, p| {
            let (a, c) = (t.param(s, p[0]), t.param(s, p[1]));
            t.add_bias(a, c)
        }));
        check("mul", &[vec![m, n], vec![m, n]], seed, Box::new(|t, s, p| {
            let (a, c) = (t.param(s, p[0]), t.param(s, p[1]));
            t.mul(a, c)
        }));
        check("mul_self", &[vec![m, n]], seed, Box::new(|t, s, p| {
            let a = t.param(s, p[0]);
            t.mul(a, a)
        }));
        check("scale", &[vec![m, n]], seed, Box::new(|t, s, p| {
            let a = t.param(s, p[0]);
            Ok(t.scale(a, -1.7))
        }));
        check("relu", &[vec![m, n]], seed, Box::new(|t, s, p| {
            let a = t.param(s, p[0]);
            Ok(t.relu(a))
        }));
        check("tanh", &[vec![m, n]], seed, Box::new(|t, s, p| {
            let a = t.param(s, p[0]);
            Ok(t.tanh(a))
        }));
        check("concat", &[vec![b, m, n], vec![b, k, n]], seed, Box::new(|t, s, p| {
            let (a, c) = (t.param(s, p[0]), t.param(s, p[1]));
            t.concat(&[a, c], 1)
        }));
        check("split", &[vec![b, m + k, n]], seed, Box::new(move |t, s, p| {
            let a = t.param(s, p[0]);
            let parts = t.split(a, 1, &[m, k])?;
            let sq = t.mul(parts[1], parts[1])?;
            let back = t.concat(&[parts[0], sq], 1)?;
            Ok(back)
        }));
        check("slice", &[vec![b, m + 2, n]], seed, Box::new(move |t, s, p| {
            let a = t.param(s, p[0]);
            t.slice(a, 1, 1, m)
        }));
        check("repeat", &[vec![b, 1, n]], seed, Box::new(move |t, s, p| {
            let a = t.param(s, p[0]);
            t.repeat(a, 1, k)
        }));
        check("reshape", &[vec![b, m, n]], seed, Box::new(move |t, s, p| {
            let a = t.param(s, p[0]);
            t.reshape(a, &[b * m, n])
        }));
        check("permute", &[vec![b, m, k, n]], seed, Box::new(|t, s, p| {
            let a = t.param(s, p[0]);
            t.permute(a, &[0, 2, 1, 3])
        }));
        check("permute_last", &[vec![b, m, n]], seed, Box::new(|t, s, p| {
            let a = t.param(s, p[0]);
            t.permute(a, &[2, 0, 1])
        }));
        let keep: Vec<bool> = (0..b * m * n).map(|i| i % n != 0 || n == 1 || i % 3 == 0).collect();
        check("softmax_masked", &[vec![b, m, n]], seed, Box::new(move |t, s, p| {
            let a = t.param(s, p[0]);
            t.softmax(a, Some(&keep))
        }));
        check("softmax", &[vec![m, n]], seed, Box::new(|t, s, p| {
            let a = t.param(s, p[0]);
            t.softmax(a, None)
        }));
        let d = n.max(2);
        check("layer_norm", &[vec![b, m, d], vec![d], vec![d]], seed, Box::new(|t, s, p| {
            let (x, g, bb) = (t.param(s, p[0]), t.param(s, p[1]), t.param(s, p[2]));
            t.layer_norm(x, g, bb, 1e-5)
        }));
        let ids: Vec<usize> = (0..m + 2).map(|i| (i * 7 + seed as usize) % k).collect();
        check("embedding", &[vec![k, n]], seed, Box::new(move |t, s, p| {
            let table = t.param(s, p[0]);
            t.embedding(table, &ids)
        }));
        let targets: Vec<Option<usize>> = (0..m).map(|i| if i == 1 { None } else { Some((i + seed as usize) % n) }).collect();
        check("cross_entropy", &[vec![m, n]], seed, Box::new(move |t, s, p| {
            let logits = t.param(s, p[0]);
            t.cross_entropy(logits, &targets, None)
        }));
        check("sinusoid", &[vec![m]], seed, Box::new(move |t, s, p| {
            let r = t.param(s, p[0]);
            t.sinusoid(r, 2 * n)
        }));
        check("dropout_eval", &[vec![m, n]], seed, Box::new(|t, s, p| {
            let a = t.param(s, p[0]);
            t.dropout(a, 0.3)
        }));
    }
}

#[test]
fn concat_backward_is_split_and_split_backward_is_concat() {
    let mut t = Tape::<f64>::eval();
    let a = t.constant(&[2, 2, 3], (0..12).map(|x| x as f64).collect()).unwrap();
    let b = t.constant(&[2, 1, 3], (0..6).map(|x| -(x as f64)).collect()).unwrap();
    let c = t.concat(&[a, b], 1).unwrap();
    let upstream: Vec<f64> = (0..18).map(|x| x as f64 * 0.1).collect();
    let w = t.constant(&[2, 3, 3], upstream.clone()).unwrap();
    let prod = t.mul(c, w).unwrap();
    let loss = t.sum(prod);
    let g = t.backward(loss).unwrap();

    // Splitting the upstream gradient along the same axis must reproduce the
    // per-part gradients.
    let mut t2 = Tape::<f64>::eval();
    let up = t2.constant(&[2, 3, 3], upstream).unwrap();
    let parts = t2.split(up, 1, &[2, 1]).unwrap();
    assert_eq!(g.wrt(a).unwrap(), t2.value(parts[0]));
    assert_eq!(g.wrt(b).unwrap(), t2.value(parts[1]));

    // And the reverse: the gradient of split pieces reassembles by concat.
    let mut t3 = Tape::<f64>::eval();
    let x = t3.constant(&[2, 3, 3], vec![0.0; 18]).unwrap();
    let pieces = t3.split(x, 1, &[2, 1]).unwrap();
    let w0 = t3.constant(&[2, 2, 3], vec![1.0; 12]).unwrap();
    let w1 = t3.constant(&[2, 1, 3], vec![2.0; 6]).unwrap();
    let p0 = t3.mul(pieces[0], w0).unwrap();
    let p1 = t3.mul(pieces[1], w1).unwrap();
    let s0 = t3.sum(p0);
    let s1 = t3.sum(p1);
    let total = t3.add(s0, s1).unwrap();
    let g3 = t3.backward(total).unwrap();
    let joined = t3.concat(&[w0, w1], 1).unwrap();
    assert_eq!(g3.wrt(x).unwrap(), t3.value(joined));
}

#[test]
fn accumulated_micro_batch_gradients_equal_the_pooled_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", &[4, 6], rand_vec(&mut rng, 24)).unwrap();
    let rows: Vec<Vec<f64>> = (0..8).map(|_| rand_vec(&mut rng, 4)).collect();
    let targets: Vec<Option<usize>> = (0..8).map(|i| Some(i % 6)).collect();

    let run = |store: &mut ParamStore<f64>, idx: &[usize], norm: f64| {
        let mut t = Tape::<f64>::eval();
        let x: Vec<f64> = idx.iter().flat_map(|&i| rows[i].clone()).collect();
        let xv = t.constant(&[idx.len(), 4], x).unwrap();
        let wv = t.param(store, w);
        let logits = t.matmul(xv, wv, false).unwrap();
        let tg: Vec<_> = idx.iter().map(|&i| targets[i]).collect();
        let loss = t.cross_entropy(logits, &tg, Some(norm)).unwrap();
        t.backward(loss).unwrap().accumulate_into(store);
    };

    let mut pooled = store.clone();
    pooled.zero_grad();
    run(&mut pooled, &(0..8).collect::<Vec<_>>(), 8.0);

    let mut micro = store.clone();
    micro.zero_grad();
    for chunk in [[0, 1], [2, 3], [4, 5], [6, 7]] {
        run(&mut micro, &chunk, 8.0);
    }
    for (a, b) in pooled.get(w).grad.iter().zip(&micro.get(w).grad) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12), "{a} vs {b}");
    }
}

#[test]
fn evaluation_is_deterministic() {
    let build = || {
        let mut t = Tape::<f32>::train(42);
        let x = t.constant(&[3, 4], (0..12).map(|v| v as f32 * 0.3).collect()).unwrap();
        let y = t.dropout(x, 0.5).unwrap();
        let s = t.softmax(y, None).unwrap();
        t.value(s).to_vec()
    };
    assert_eq!(build(), build());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_with_zeros_on_masks(
        values in prop::collection::vec(-30.0f64..30.0, 1..40),
        mask_bits in prop::collection::vec(any::<bool>(), 40),
        width in 1usize..6,
    ) {
        let rows = values.len() / width;
        prop_assume!(rows > 0);
        let n = rows * width;
        let keep: Vec<bool> = mask_bits.iter().cycle().take(n).copied().collect();
        let mut t = Tape::<f64>::eval();
        let x = t.constant(&[rows, width], values[..n].to_vec()).unwrap();
        let y = t.softmax(x, Some(&keep)).unwrap();
        for (r, row) in t.value(y).chunks(width).enumerate() {
            let kept = &keep[r * width..(r + 1) * width];
            for (p, k) in row.iter().zip(kept) {
                prop_assert!(*p >= 0.0);
                if !k { prop_assert_eq!(*p, 0.0); }
            }
            if kept.iter().any(|&k| k) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
