//! Straight-line re-implementations of the distiller, cross-attention and
//! recurrent predictors, compared against the tape-based layers.

use dubalign::idd::{Aggregate, SlotBank, SlotDistiller, SLOTS};
use dubalign::iec::ProsodyModel;
use dubalign::layers::{CrossAttention, RecurrentPredictor};
use dubalign::numerics::{ParamStore, Tape, Tensor2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

fn m(store: &ParamStore, name: &str) -> M {
    let t = store.get(name).unwrap();
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn of(t: &Tensor2D) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn tensor(a: &M) -> Tensor2D {
    Tensor2D::from_rows(a).unwrap()
}

fn mm(a: &M, b: &M) -> M {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn add_bias(a: &M, b: &[f64]) -> M {
    a.iter()
        .map(|x| x.iter().zip(b).map(|(p, q)| p + q).collect())
        .collect()
}

fn map(a: &M, f: impl Fn(f64) -> f64) -> M {
    a.iter().map(|x| x.iter().map(|&v| f(v)).collect()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn transpose(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn max_diff(a: &M, b: &M) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> M {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// `s' = (1 - z) s + z h` with the reset gate applied before `U_h`.
fn gru(store: &ParamStore, prefix: &str, u: &M, s: &M) -> M {
    let p = |n: &str| m(store, &format!("{prefix}.{n}"));
    let gate = |w: &str, uu: &str, b: &str, state: &M| add_bias(&add(&mm(u, &p(w)), &mm(state, &p(uu))), &p(b)[0]);
    let z = map(&gate("w_z", "u_z", "b_z", s), sig);
    let r = map(&gate("w_r", "u_r", "b_r", s), sig);
    let rs: M = r
        .iter()
        .zip(s)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
        .collect();
    let h = map(&gate("w_h", "u_h", "b_h", &rs), f64::tanh);
    (0..s.len())
        .map(|i| {
            (0..s[0].len())
                .map(|j| (1.0 - z[i][j]) * s[i][j] + z[i][j] * h[i][j])
                .collect()
        })
        .collect()
}

fn layer_norm(store: &ParamStore, prefix: &str, x: &M) -> M {
    let g = &m(store, &format!("{prefix}.gamma"))[0];
    let b = &m(store, &format!("{prefix}.beta"))[0];
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mu) / (var + 1e-5).sqrt() * g[j] + b[j])
                .collect()
        })
        .collect()
}

fn mlp(store: &ParamStore, prefix: &str, x: &M) -> M {
    let h = map(
        &add_bias(
            &mm(x, &m(store, &format!("{prefix}.l1.w"))),
            &m(store, &format!("{prefix}.l1.b"))[0],
        ),
        f64::tanh,
    );
    add_bias(
        &mm(&h, &m(store, &format!("{prefix}.l2.w"))),
        &m(store, &format!("{prefix}.l2.b"))[0],
    )
}

/// Returns `(pre-normalization slots, normalized output)`.
fn distill_oracle(store: &ParamStore, input: &M, slots: &M, iterations: usize, aggregate: Aggregate) -> (M, M) {
    let d = input[0].len() as f64;
    let keys = mm(input, &m(store, "idd.key.w"));
    let values = mm(input, &m(store, "idd.value.w"));
    let mut s = slots.clone();
    for _ in 0..iterations {
        let q = mm(&s, &m(store, "idd.query.w"));
        let logits: M = q
            .iter()
            .map(|qr| {
                keys.iter()
                    .map(|kr| qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                    .collect()
            })
            .collect();
        // softmax over slots: per input column
        let (k, l) = (logits.len(), logits[0].len());
        let mut alpha = vec![vec![0.0; l]; k];
        for n in 0..l {
            let mx = (0..k).map(|i| logits[i][n]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..k).map(|i| (logits[i][n] - mx).exp()).sum();
            for i in 0..k {
                alpha[i][n] = (logits[i][n] - mx).exp() / z;
            }
        }
        if aggregate == Aggregate::Mean {
            for row in &mut alpha {
                let t: f64 = row.iter().sum::<f64>() + 1e-8;
                row.iter_mut().for_each(|v| *v /= t);
            }
        }
        let u = mm(&alpha, &values);
        let g = gru(store, "idd.gru", &u, &s);
        s = add(&g, &mlp(store, "idd.mlp", &layer_norm(store, "idd.ln", &g)));
    }
    let out = layer_norm(store, "idd.out_ln", &s);
    (s, out)
}

fn distiller(dim: usize, k: usize, aggregate: Aggregate, seed: u64) -> (SlotDistiller, ParamStore) {
    let d = SlotDistiller::new(dim, 2 * dim, aggregate);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    d.init(&mut store, k, &mut rng);
    // move the norms off their identity init so they are exercised
    for name in ["idd.ln.gamma", "idd.ln.beta", "idd.out_ln.gamma", "idd.out_ln.beta"] {
        let t = tensor(&random(&mut rng, 1, dim));
        store.set(name, t).unwrap();
    }
    (d, store)
}

fn run_distill(d: &SlotDistiller, store: &ParamStore, input: &M, iterations: usize) -> (M, M, Vec<M>) {
    let mut tape = Tape::new();
    let x = tape.constant(tensor(input));
    let s = tape.param(store, SLOTS).unwrap();
    let tr = d.forward_tape(&mut tape, store, x, s, iterations).unwrap();
    let attn = tr.attention.iter().map(|a| of(tape.value(*a))).collect();
    (of(tape.value(tr.slots)), of(tape.value(tr.output)), attn)
}

#[test]
fn single_token_single_slot_hand_trace() {
    let (d, store) = distiller(6, 1, Aggregate::Sum, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, 1, 6);
    let (pre, out, attn) = run_distill(&d, &store, &x, 1);
    assert_eq!(attn[0], vec![vec![1.0]]);
    // alpha = 1, so u = v1; s = GRU(v1, s0) + MLP(LN(GRU(v1, s0)))
    let v1 = mm(&x, &m(&store, "idd.value.w"));
    let g = gru(&store, "idd.gru", &v1, &m(&store, SLOTS));
    let expect = add(&g, &mlp(&store, "idd.mlp", &layer_norm(&store, "idd.ln", &g)));
    assert!(max_diff(&pre, &expect) < 1e-12);
    assert!(max_diff(&out, &layer_norm(&store, "idd.out_ln", &expect)) < 1e-12);
}

#[test]
fn multi_slot_multi_round_matches_oracle() {
    for (k, t, agg) in [(3, 2, Aggregate::Sum), (5, 3, Aggregate::Mean), (10, 3, Aggregate::Sum)] {
        let (d, store) = distiller(8, k, agg, k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random(&mut rng, 7, 8);
        let (pre, out, _) = run_distill(&d, &store, &x, t);
        let (opre, oout) = distill_oracle(&store, &x, &m(&store, SLOTS), t, agg);
        assert!(max_diff(&pre, &opre) < 1e-10, "K={k} T={t}");
        assert!(max_diff(&out, &oout) < 1e-10);
        assert_eq!(out.len(), k);
    }
}

#[test]
fn duplicated_tokens_confirm_sum_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, 4, 6);
    let doubled: M = x.iter().chain(x.iter()).cloned().collect();
    let (d, store) = distiller(6, 1, Aggregate::Sum, 21);
    let (_, single, _) = run_distill(&d, &store, &x, 1);
    let (_, twice, attn) = run_distill(&d, &store, &doubled, 1);
    assert!(attn[0][0].iter().all(|&a| a == 1.0));
    // the oracle's u on the doubled input is exactly 2 * sum(v)
    let (_, oracle) = distill_oracle(&store, &doubled, &m(&store, SLOTS), 1, Aggregate::Sum);
    assert!(max_diff(&twice, &oracle) < 1e-12);
    assert!(max_diff(&twice, &single) > 1e-3, "sum form must see the doubled update");

    let (dm, sm) = distiller(6, 1, Aggregate::Mean, 21);
    let (_, a, _) = run_distill(&dm, &sm, &x, 1);
    let (_, b, _) = run_distill(&dm, &sm, &doubled, 1);
    // invariant up to the 1e-8 added to the row sums
    assert!(max_diff(&a, &b) < 1e-7, "mean form is duplication invariant");
}

#[test]
fn slot_weights_normalize_over_slots() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [1, 5, 10, 20] {
        let (d, store) = distiller(16, k, Aggregate::Sum, k as u64 + 40);
        let x = random(&mut rng, 9, 16);
        let (_, _, attn) = run_distill(&d, &store, &x, 3);
        for a in attn {
            for n in 0..9 {
                let s: f64 = a.iter().take(k).map(|row| row[n]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn permuting_slots_permutes_prototypes_and_leaves_fusion() {
    let (d, mut store) = distiller(8, 5, Aggregate::Sum, 77);
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let x = random(&mut rng, 6, 8);
    let (_, base, _) = run_distill(&d, &store, &x, 3);
    let perm = [3, 0, 4, 1, 2];
    let slots = m(&store, SLOTS);
    let permuted: M = perm.iter().map(|&i| slots[i].clone()).collect();
    store.set(SLOTS, tensor(&permuted)).unwrap();
    let bank = SlotBank::from_store(&store, 3).unwrap();
    let out = of(&d.distill(&store, &tensor(&x), &bank).unwrap());
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(out[row], base[src], "row {row} must be bit-identical");
    }

    let ca = CrossAttention::new("f", 8, 4);
    let mut cs = ParamStore::new();
    ca.init(&mut cs, &mut rng);
    let q = random(&mut rng, 5, 4);
    let fuse = |mem: &M| {
        let mut tape = Tape::new();
        let qv = tape.constant(tensor(&q));
        let mv = tape.constant(tensor(mem));
        let o = ca.forward(&mut tape, &cs, qv, mv).unwrap();
        of(tape.value(o))
    };
    assert!(max_diff(&fuse(&base), &fuse(&out)) < 1e-12);
}

fn attention_oracle(store: &ParamStore, prefix: &str, queries: &M, memory: &M) -> M {
    let reduced = mm(memory, &m(store, &format!("{prefix}.reduce.w")));
    let q = mm(queries, &m(store, &format!("{prefix}.ca.q.w")));
    let k = mm(&reduced, &m(store, &format!("{prefix}.ca.k.w")));
    let v = mm(&reduced, &m(store, &format!("{prefix}.ca.v.w")));
    let dm = q[0].len() as f64;
    let scores = map(&mm(&q, &transpose(&k)), |s| s / dm.sqrt());
    let weights: M = scores
        .iter()
        .map(|row| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        })
        .collect();
    mm(&weights, &v)
}

#[test]
fn cross_attention_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ca = CrossAttention::new("idd", 12, 6);
    let mut store = ParamStore::new();
    ca.init(&mut store, &mut rng);
    for (lq, k) in [(1, 3), (17, 10), (128, 4)] {
        let q = random(&mut rng, lq, 6);
        let mem = random(&mut rng, k, 12);
        let mut tape = Tape::new();
        let qv = tape.constant(tensor(&q));
        let mv = tape.constant(tensor(&mem));
        let o = ca.forward(&mut tape, &store, qv, mv).unwrap();
        let got = of(tape.value(o));
        assert_eq!(got.len(), lq);
        assert!(max_diff(&got, &attention_oracle(&store, "idd", &q, &mem)) < 1e-12);
    }
    // one key: every row is the value projection of the reduced prototype
    let q = random(&mut rng, 9, 6);
    let mem = random(&mut rng, 1, 12);
    let mut tape = Tape::new();
    let qv = tape.constant(tensor(&q));
    let mv = tape.constant(tensor(&mem));
    let o = ca.forward(&mut tape, &store, qv, mv).unwrap();
    let v = mm(&mm(&mem, &m(&store, "idd.reduce.w")), &m(&store, "idd.ca.v.w"));
    for row in of(tape.value(o)) {
        assert!(max_diff(&vec![row], &v) < 1e-15);
    }
}

fn bigru_oracle(store: &ParamStore, prefix: &str, x: &M, hidden: usize, heads: &[&str]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut f = Vec::new();
    let mut s = vec![vec![0.0; hidden]];
    for row in x {
        s = gru(store, &format!("{prefix}.fwd"), &vec![row.clone()], &s);
        f.push(s[0].clone());
    }
    let mut b = vec![Vec::new(); n];
    let mut s = vec![vec![0.0; hidden]];
    for i in (0..n).rev() {
        s = gru(store, &format!("{prefix}.bwd"), &vec![x[i].clone()], &s);
        b[i] = s[0].clone();
    }
    let h: M = f
        .into_iter()
        .zip(b)
        .map(|(a, c)| a.into_iter().chain(c).collect())
        .collect();
    heads
        .iter()
        .map(|name| {
            let out = add_bias(
                &mm(&h, &m(store, &format!("{prefix}.{name}.w"))),
                &m(store, &format!("{prefix}.{name}.b"))[0],
            );
            out.into_iter().map(|r| r[0]).collect()
        })
        .collect()
}

fn run_predictor(p: &RecurrentPredictor, store: &ParamStore, x: &M) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let xv = tape.constant(tensor(x));
    p.forward(&mut tape, store, xv)
        .unwrap()
        .into_iter()
        .map(|v| tape.value(v).data().to_vec())
        .collect()
}

#[test]
fn recurrent_predictor_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = RecurrentPredictor::new("dp", 5, 4, &["head"]);
    let mut store = ParamStore::new();
    p.init(&mut store, &mut rng);
    store.set("dp.head.b", Tensor2D::scalar(0.3)).unwrap();
    let x = random(&mut rng, 11, 5);
    let got = run_predictor(&p, &store, &x);
    let want = bigru_oracle(&store, "dp", &x, 4, &["head"]);
    assert_eq!(got[0].len(), 11);
    assert!(max_diff(&got, &want) < 1e-12);
}

#[test]
fn zero_parameters_give_head_bias() {
    let p = RecurrentPredictor::new("dp", 5, 4, &["head"]);
    let mut store = ParamStore::new();
    p.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        let (r, c) = store.get(&n).unwrap().shape();
        store.set(&n, Tensor2D::zeros(r, c)).unwrap();
    }
    store.set("dp.head.b", Tensor2D::scalar(-0.7)).unwrap();
    let x = random(&mut ChaCha8Rng::seed_from_u64(2), 6, 5);
    assert_eq!(run_predictor(&p, &store, &x)[0], vec![-0.7; 6]);
}

#[test]
fn reversal_with_swapped_directions_reverses_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = RecurrentPredictor::new("dp", 3, 4, &["head"]);
    let mut store = ParamStore::new();
    p.init(&mut store, &mut rng);
    let x = random(&mut rng, 8, 3);
    let base = run_predictor(&p, &store, &x)[0].clone();

    let mut swapped = store.clone();
    for part in ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"] {
        let f = store.get(&format!("dp.fwd.{part}")).unwrap().clone();
        let b = store.get(&format!("dp.bwd.{part}")).unwrap().clone();
        swapped.set(&format!("dp.fwd.{part}"), b).unwrap();
        swapped.set(&format!("dp.bwd.{part}"), f).unwrap();
    }
    // the head reads [forward | backward], so its halves trade places too
    let w = m(&store, "dp.head.w");
    let half = w.len() / 2;
    let w2: M = w[half..].iter().chain(&w[..half]).cloned().collect();
    swapped.set("dp.head.w", tensor(&w2)).unwrap();

    let reversed: M = x.iter().rev().cloned().collect();
    let mut out = run_predictor(&p, &swapped, &reversed)[0].clone();
    out.reverse();
    for (a, b) in out.iter().zip(&base) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn prosody_matches_direct_attention_and_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let model = ProsodyModel::new(10, 6, 5);
    let mut store = ParamStore::new();
    model.init(&mut store, &mut rng);
    for e in [1, 2] {
        let ent = random(&mut rng, e, 10);
        let ph = random(&mut rng, 13, 6);
        let got = model.predict(&store, &tensor(&ent), &tensor(&ph)).unwrap();
        let fused = attention_oracle(&store, "iec", &ph, &ent);
        let x: M = ph
            .iter()
            .zip(&fused)
            .map(|(a, b)| a.iter().chain(b).cloned().collect())
            .collect();
        let want = bigru_oracle(&store, "iec.pred", &x, 5, &["pitch", "energy"]);
        assert_eq!(got.pitch.len(), 13);
        assert!(max_diff(&vec![got.pitch.clone()], &vec![want[0].clone()]) < 1e-12);
        assert!(max_diff(&vec![got.energy.clone()], &vec![want[1].clone()]) < 1e-12);
        if e == 1 {
            let v = mm(&mm(&ent, &m(&store, "iec.reduce.w")), &m(&store, "iec.ca.v.w"));
            assert!(fused.iter().all(|r| max_diff(&vec![r.clone()], &v) < 1e-15));
        }
    }
}
