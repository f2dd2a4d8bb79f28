//! Central finite differences against the analytic backward pass, 64-bit.

use empdial_tensor::{init, Graph, ParamId, ParamStore, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Max relative error over every scalar of every parameter.
fn check<F>(store: &mut ParamStore<f64>, f: F) -> f64
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(store);
        let loss = f(&mut g).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut per: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; store.get(id).len()]).collect();
        for (id, gr) in grads.param_grads() {
            per[id.index()].copy_from_slice(gr);
        }
        per
    };
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let loss = f(&mut g).unwrap();
        g.value(loss).data()[0]
    };
    let mut worst = 0.0f64;
    for &id in &ids {
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + H;
            let up = eval(store);
            store.get_mut(id).data_mut()[j] = orig - H;
            let down = eval(store);
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(numeric, analytic[id.index()][j]));
        }
    }
    worst
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], r: &mut ChaCha8Rng) -> ParamId {
    store.add(name, init::normal(shape, 1.0, r)).unwrap()
}

/// Weighted sum so that every output element carries a distinct gradient.
fn weighted_sum(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let w = init::normal(&shape, 1.0, &mut rng(seed));
    let wv = g.input(w);
    let p = g.mul(x, wv)?;
    Ok(g.sum(p))
}

#[test]
fn each_op_passes_finite_differences() {
    for seed in 0..4u64 {
        let mut r = rng(seed);
        let (m, k, n) = (2 + seed as usize % 3, 3 + seed as usize % 4, 2 + seed as usize % 5);
        let mut s = ParamStore::new();
        let a = param(&mut s, "a", &[m, k], &mut r);
        let b = param(&mut s, "b", &[k, n], &mut r);
        let bt = param(&mut s, "bt", &[n, k], &mut r);
        let row = param(&mut s, "row", &[n], &mut r);
        let gamma = param(&mut s, "gamma", &[n], &mut r);
        let beta = param(&mut s, "beta", &[n], &mut r);
        let sq = param(&mut s, "sq", &[n, n], &mut r);
        let table = param(&mut s, "table", &[5, n], &mut r);

        let cases: Vec<(&str, Box<dyn Fn(&mut Graph<'_, f64>) -> Result<Var>>)> = vec![
            ("matmul", Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(b));
                let y = g.matmul(a, b)?;
                weighted_sum(g, y, 100)
            })),
            ("matmul_bt", Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(bt));
                let y = g.matmul_bt(a, b)?;
                weighted_sum(g, y, 101)
            })),
            ("add_row+mul+scale", Box::new(move |g| {
                let (a, b, r) = (g.param(a), g.param(b), g.param(row));
                let y = g.matmul(a, b)?;
                let y = g.add_row(y, r)?;
                let z = g.mul(y, y)?;
                let z = g.scale(z, 0.3);
                let z = g.add(z, y)?;
                weighted_sum(g, z, 102)
            })),
            ("transpose", Box::new(move |g| {
                let a = g.param(a);
                let t = g.transpose(a)?;
                weighted_sum(g, t, 103)
            })),
            ("softmax", Box::new(move |g| {
                let a = g.param(a);
                let y = g.softmax(a);
                weighted_sum(g, y, 104)
            })),
            ("causal_softmax", Box::new(move |g| {
                let q = g.param(sq);
                let y = g.causal_softmax(q)?;
                weighted_sum(g, y, 105)
            })),
            ("layer_norm", Box::new(move |g| {
                let (a, b, ga, be) = (g.param(a), g.param(b), g.param(gamma), g.param(beta));
                let y = g.matmul(a, b)?;
                let y = g.layer_norm(y, ga, be)?;
                weighted_sum(g, y, 106)
            })),
            ("gelu", Box::new(move |g| {
                let a = g.param(a);
                let y = g.gelu(a);
                weighted_sum(g, y, 107)
            })),
            ("dropout", Box::new(move |g| {
                let a = g.param(a);
                let y = g.dropout_with_seed(a, 0.4, 5);
                weighted_sum(g, y, 108)
            })),
            ("embedding", Box::new(move |g| {
                let t = g.param(table);
                let y = g.embedding(t, &[0, 3, 3, 1])?;
                weighted_sum(g, y, 109)
            })),
            ("cross_entropy", Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(b));
                let y = g.matmul(a, b)?;
                let targets: Vec<usize> = (0..m).map(|i| i % n).collect();
                g.cross_entropy(y, &targets)
            })),
            ("col_slice+concat", Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(b));
                let y = g.matmul(a, b)?;
                let left = g.col_slice(y, 0, 1)?;
                let right = g.col_slice(y, 1, n - 1)?;
                let z = g.concat_cols(&[right, left, left])?;
                weighted_sum(g, z, 110)
            })),
        ];
        for (name, f) in cases {
            let err = check(&mut s, |g| f(g));
            assert!(err < 1e-4, "{name} (seed {seed}): max relative error {err:e}");
        }
    }
}

#[test]
fn three_layer_network() {
    let mut r = rng(42);
    let mut s = ParamStore::new();
    let dims = [4usize, 6, 5, 3];
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let wt = s.add(format!("w{i}"), init::xavier(w[0], w[1], &mut r)).unwrap();
        let bs = s.add(format!("b{i}"), init::normal(&[w[1]], 0.1, &mut r)).unwrap();
        layers.push((wt, bs));
    }
    let x = init::normal::<f64, _>(&[3, 4], 1.0, &mut r);
    let err = check(&mut s, |g| {
        let mut h = g.input(x.clone());
        for (i, &(w, b)) in layers.iter().enumerate() {
            let (w, b) = (g.param(w), g.param(b));
            h = g.matmul(h, w)?;
            h = g.add_row(h, b)?;
            if i + 1 < layers.len() {
                h = g.gelu(h);
            }
        }
        g.cross_entropy(h, &[0, 2, 1])
    });
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(3);
    let s = ParamStore::<f32>::new();
    for _ in 0..50 {
        let t = init::normal::<f32, _>(&[3, 7], 5.0, &mut r);
        let mut g = Graph::new(&s);
        let x = g.input(t);
        let y = g.softmax(x);
        for row in g.value(y).data().chunks(7) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn backward_accumulates_without_zeroing() {
    let mut s = ParamStore::<f64>::new();
    let w = s.add("w", Tensor::from_f64(&[3], &[1.0, -1.0, 2.0]).unwrap()).unwrap();
    for k in 1..=3 {
        let mut g = Graph::new(&s);
        let v = g.param(w);
        let sq = g.mul(v, v).unwrap();
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        s.accumulate(&grads);
        let got = s.get(w).grad().unwrap().to_vec();
        assert_eq!(got, vec![2.0 * k as f64, -2.0 * k as f64, 4.0 * k as f64]);
    }
}
