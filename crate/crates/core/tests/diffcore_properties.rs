use nvif_lab::diffcore::checkpoint::{load_store, save_store};
use nvif_lab::diffcore::{Adam, Array, GruCell, Linear, Moments, ParamStore, Tape, TwoLayerMlp, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Net {
    store: ParamStore,
    lin: Linear,
    gru: GruCell,
    mlp: TwoLayerMlp,
}

fn net(seed: u64) -> Net {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 3, 4, true, &mut rng).unwrap();
    let gru = GruCell::new(&mut store, "gru", 4, 4, &mut rng).unwrap();
    let mlp = TwoLayerMlp::new(&mut store, "mlp", 4, 5, 2, &mut rng).unwrap();
    Net { store, lin, gru, mlp }
}

/// Two losses sharing one forward graph.
fn losses<'p>(tape: &mut Tape<'p>, n: &Net, store: &'p ParamStore, x: &Array) -> (Var, Var, Var) {
    let xv = tape.constant(x.clone());
    let h = n.lin.forward(tape, store, xv).unwrap();
    let h = tape.tanh(h);
    let h = n.gru.forward(tape, store, h, h).unwrap();
    let y = n.mlp.forward(tape, store, h).unwrap();
    let sq = tape.square(y);
    let l1 = tape.sum(sq);
    let s = tape.sigmoid(h);
    let l2 = tape.mean(s);
    (h, l1, l2)
}

fn forward(n: &Net, store: &ParamStore, x: &Array) -> Vec<f64> {
    let mut tape = Tape::new();
    let (h, _, _) = losses(&mut tape, n, store, x);
    tape.value(h).data().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear_in_the_loss(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let n = net(seed);
        let x = Array::matrix(2, 3, vec![0.3, -0.1, 0.8, -0.5, 0.2, 0.6]);
        let grads_of = |which: u8| {
            let mut tape = Tape::new();
            let (_, l1, l2) = losses(&mut tape, &n, &n.store, &x);
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => {
                    let s1 = tape.scale(l1, a);
                    let s2 = tape.scale(l2, b);
                    tape.add(s1, s2).unwrap()
                }
            };
            let g = tape.backward(loss).unwrap();
            n.store.ids().map(|id| g.get(&n.store, id).map(|a| a.data().to_vec())).collect::<Vec<_>>()
        };
        let (g1, g2, g12) = (grads_of(1), grads_of(2), grads_of(0));
        for ((p1, p2), p12) in g1.iter().zip(&g2).zip(&g12) {
            let zeros = vec![0.0; p12.as_ref().map_or(0, Vec::len)];
            let (p1, p2) = (p1.as_ref().unwrap_or(&zeros), p2.as_ref().unwrap_or(&zeros));
            for k in 0..zeros.len() {
                let want = a * p1[k] + b * p2[k];
                prop_assert!((p12.as_ref().unwrap()[k] - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_forward_and_optimizer_state() {
    let mut n = net(3);
    let x = Array::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
    let opt = Adam::new(0.01, Moments::default());
    for _ in 0..3 {
        let grads = {
            let mut tape = Tape::new();
            let (_, l1, _) = losses(&mut tape, &n, &n.store, &x);
            tape.backward(l1).unwrap()
        };
        n.store.zero_grad();
        n.store.accumulate(&grads);
        opt.step(&mut n.store);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    save_store(&n.store, &path, serde_json::json!({"note": "test"})).unwrap();
    let (back, meta) = load_store(&path).unwrap();
    assert_eq!(meta["note"], "test");
    assert_eq!(back.step_count(), 3);
    assert!(back.values_equal(&n.store));
    assert_eq!(forward(&n, &back, &x), forward(&n, &n.store, &x));

    // One more identical step from each copy stays bit-identical.
    let mut restored = back;
    let layers = layers_only(&n);
    for store in [&mut n.store, &mut restored] {
        let grads = {
            let mut tape = Tape::new();
            let (_, l1, _) = losses(&mut tape, &layers, store, &x);
            tape.backward(l1).unwrap()
        };
        store.zero_grad();
        store.accumulate(&grads);
        opt.step(store);
    }
    assert!(restored.values_equal(&n.store));
}

/// Layer handles without the store, for use while the store is borrowed.
fn layers_only(n: &Net) -> Net {
    Net {
        store: ParamStore::new(),
        lin: n.lin,
        gru: n.gru,
        mlp: n.mlp,
    }
}
