//! End-to-end acceptance checks. Every test writes one PASS/FAIL line to
//! stderr before asserting, so `cargo test --test acceptance -- --nocapture`
//! gives a one-screen summary.

use std::io::Write;
use std::path::Path;
use std::rc::Rc;
use std::time::{Duration, Instant};

use nvif_lab::commgraph::{info_direct, info_unrolled, NeighborGraph};
use nvif_lab::diffcore::gradcheck::{check_gradients, GradCheckReport};
use nvif_lab::diffcore::{gaussian_sample, Array, GruCell, Linear, ParamId, ParamStore, SparseMatrix, Tape, Var};
use nvif_lab::env_gather::{TaskConfig, TaskKind};
use nvif_lab::harness::{self, ExperimentConfig, TrainOptions, METRICS_FILE};
use nvif_lab::nvif::{
    batch_loss, collect_random, encode_buffer, kl_divergence, pretrain, GraphMode, NvifConfig, NvifModel, ObsCompressor,
    ObsVaeConfig, PretrainBuffer, PretrainConfig, PretrainEpoch,
};
use nvif_lab::policy::{
    alignment_check, clip_term, compute_gae, make_source, ppo_actor_terms, train_nvif_ppo, ActorCritic, EpochMetrics,
    Featurizer, LatentKind, NetworkConfig, PpoBatch, PpoHyper, ToyMdp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const INFO_EPISODES: usize = 200;
const INFO_MAX_AGENTS: usize = 8;
const INFO_MAX_T: usize = 6;
const INFO_BUDGET: Duration = Duration::from_secs(10);
const KL_SAMPLES: usize = 1_000_000;
const KL_CASES: usize = 20;
const KL_TOL: f64 = 1e-2;
const GAE_EPISODES: usize = 100;
const GAE_MAX_T: usize = 50;
const GAE_TOL: f64 = 1e-9;
const TOY_VALUE_TOL: f64 = 1e-12;
const ALIGNMENT_VECTORS: usize = 10_000;
const PRETRAIN_EPISODES: usize = 200;
const PRETRAIN_MAX_EPOCHS: usize = 200;
const PRETRAIN_RECON_RATIO: f64 = 0.5;
const PRETRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const FOOD_TARGET: f64 = 0.9;
const EPISODE_CAP: usize = 2000;
const TREND_BUDGET: Duration = Duration::from_secs(2 * 60 * 60);
const CLIP_GRAD_TOL: f64 = 1e-4;

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("acceptance {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- gradients

/// Values kept away from the kinks of relu, clamp(±0.5) and minimum.
fn away_from_kinks(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mut x: f64 = rng.random_range(-0.9..0.9);
            if x.abs() < 0.1 {
                x += 0.2 * x.signum();
            }
            if (x.abs() - 0.5).abs() < 0.05 {
                x *= 1.2;
            }
            x
        })
        .collect()
}

struct OpFixture {
    store: ParamStore,
    a: ParamId,
    b: ParamId,
    m: ParamId,
    row: ParamId,
    p: ParamId,
    weights: Array,
    wide_weights: Array,
    target: Array,
    sparse: Rc<SparseMatrix>,
}

fn op_fixture() -> OpFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let av = away_from_kinks(&mut rng, 12);
    let bv: Vec<f64> = av
        .iter()
        .map(|&x| {
            let mut y = away_from_kinks(&mut rng, 1)[0];
            if (x - y).abs() < 0.1 {
                y = -y + 0.05;
            }
            y
        })
        .collect();
    let a = store.add("a", Array::matrix(3, 4, av)).unwrap();
    let b = store.add("b", Array::matrix(3, 4, bv)).unwrap();
    let m = store.add("m", Array::matrix(4, 2, away_from_kinks(&mut rng, 8))).unwrap();
    let row = store.add("row", Array::matrix(1, 4, away_from_kinks(&mut rng, 4))).unwrap();
    let p = store
        .add("p", Array::matrix(3, 4, (0..12).map(|_| rng.random_range(0.1..0.9)).collect()))
        .unwrap();
    let weights = Array::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
    let wide_weights = Array::matrix(3, 8, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
    let target = Array::matrix(3, 4, (0..12).map(|k| if k % 3 == 0 { 1.0 } else { 0.0 }).collect());
    let sparse = Rc::new(SparseMatrix::from_triplets(
        3,
        3,
        vec![(0, 0, 0.5), (0, 1, 0.25), (1, 1, 1.0), (2, 0, -0.75), (2, 2, 0.125)],
    ));
    OpFixture {
        store,
        a,
        b,
        m,
        row,
        p,
        weights,
        wide_weights,
        target,
        sparse,
    }
}

/// `Σ w ⊙ v` for a weight array of matching shape, so every output entry
/// gets a distinct cotangent.
fn weighted<'p>(tape: &mut Tape<'p>, v: Var, w: &Array) -> Result<Var, nvif_lab::diffcore::DiffError> {
    let shape = tape.value(v).shape().to_vec();
    let len: usize = shape.iter().product();
    let data = w.data().iter().copied().cycle().take(len).collect();
    let wv = tape.constant(Array::new(shape, data)?);
    let prod = tape.mul(v, wv)?;
    Ok(tape.sum(prod))
}

type OpBuilder = fn(&mut Tape<'_>, &OpFixture, Var, Var, Var, Var, Var) -> Result<Var, nvif_lab::diffcore::DiffError>;

fn op_cases() -> Vec<(&'static str, OpBuilder)> {
    vec![
        ("matmul", |t, f, a, _, m, _, _| {
            let y = t.matmul(a, m)?;
            weighted(t, y, &f.weights)
        }),
        ("add", |t, f, a, b, _, _, _| {
            let y = t.add(a, b)?;
            weighted(t, y, &f.weights)
        }),
        ("sub", |t, f, a, b, _, _, _| {
            let y = t.sub(a, b)?;
            weighted(t, y, &f.weights)
        }),
        ("mul", |t, f, a, b, _, _, _| {
            let y = t.mul(a, b)?;
            weighted(t, y, &f.weights)
        }),
        ("add_row", |t, f, a, _, _, r, _| {
            let y = t.add_row(a, r)?;
            weighted(t, y, &f.weights)
        }),
        ("affine", |t, f, a, _, _, _, _| {
            let y = t.affine(a, 1.5, -0.3);
            weighted(t, y, &f.weights)
        }),
        ("scale", |t, f, a, _, _, _, _| {
            let y = t.scale(a, -2.0);
            weighted(t, y, &f.weights)
        }),
        ("concat", |t, f, a, b, _, _, _| {
            let y = t.concat(&[a, b])?;
            weighted(t, y, &f.wide_weights)
        }),
        ("relu", |t, f, a, _, _, _, _| {
            let y = t.relu(a);
            weighted(t, y, &f.weights)
        }),
        ("sigmoid", |t, f, a, _, _, _, _| {
            let y = t.sigmoid(a);
            weighted(t, y, &f.weights)
        }),
        ("tanh", |t, f, a, _, _, _, _| {
            let y = t.tanh(a);
            weighted(t, y, &f.weights)
        }),
        ("exp", |t, f, a, _, _, _, _| {
            let y = t.exp(a);
            weighted(t, y, &f.weights)
        }),
        ("log", |t, f, _, _, _, _, p| {
            let y = t.log(p);
            weighted(t, y, &f.weights)
        }),
        ("square", |t, f, a, _, _, _, _| {
            let y = t.square(a);
            weighted(t, y, &f.weights)
        }),
        ("clamp", |t, f, a, _, _, _, _| {
            let y = t.clamp(a, -0.5, 0.5);
            weighted(t, y, &f.weights)
        }),
        ("minimum", |t, f, a, b, _, _, _| {
            let y = t.minimum(a, b)?;
            weighted(t, y, &f.weights)
        }),
        ("sum", |t, _, a, _, _, _, _| {
            let s = t.square(a);
            Ok(t.sum(s))
        }),
        ("mean", |t, _, a, _, _, _, _| {
            let s = t.square(a);
            Ok(t.mean(s))
        }),
        ("sum_cols", |t, f, a, _, _, _, _| {
            let y = t.sum_cols(a);
            weighted(t, y, &f.weights)
        }),
        ("bce_sum", |t, f, _, _, _, _, p| {
            let target = t.constant(f.target.clone());
            t.bce_sum(target, p)
        }),
        ("bce_loss", |t, f, _, _, _, _, p| {
            let target = t.constant(f.target.clone());
            t.bce_loss(target, p)
        }),
        ("mse", |t, _, a, b, _, _, _| t.mse(a, b)),
        ("sparse_matmul", |t, f, a, _, _, _, _| {
            let y = t.sparse_matmul(f.sparse.clone(), a)?;
            weighted(t, y, &f.weights)
        }),
        ("log_softmax", |t, f, a, _, _, _, _| {
            let y = t.log_softmax(a);
            weighted(t, y, &f.weights)
        }),
        ("pick", |t, _, a, _, _, _, _| {
            let ls = t.log_softmax(a);
            let y = t.pick(ls, vec![2, 0, 3])?;
            Ok(t.sum(y))
        }),
        ("gather_rows", |t, f, a, _, _, _, _| {
            let y = t.gather_rows(a, vec![Some(2), None, Some(0), Some(2)])?;
            weighted(t, y, &f.weights)
        }),
        ("group_center", |t, f, a, _, _, _, _| {
            let y = t.group_center(a, vec![0, 0, 1])?;
            let y = t.square(y);
            weighted(t, y, &f.weights)
        }),
    ]
}

fn op_reports() -> Vec<(String, GradCheckReport)> {
    let mut out = Vec::new();
    for (name, build) in op_cases() {
        let mut f = op_fixture();
        let ids = [f.a, f.b, f.m, f.row, f.p];
        let mut store = std::mem::take(&mut f.store);
        let fx = &f;
        let r = check_gradients(&mut store, GRAD_STEP, None, |tape, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
            build(tape, fx, vars[0], vars[1], vars[2], vars[3], vars[4])
        })
        .unwrap();
        out.push((name.to_string(), r));
    }

    // Layers and the reparameterised sample.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 4, 3, true, &mut rng).unwrap();
    let gru = GruCell::new(&mut store, "gru", 3, 2, &mut rng).unwrap();
    let x = Array::matrix(3, 4, away_from_kinks(&mut rng, 12));
    let h0 = Array::matrix(3, 2, away_from_kinks(&mut rng, 6));
    let w = Array::matrix(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
    let r = check_gradients(&mut store, GRAD_STEP, None, |tape, s| {
        let xv = tape.constant(x.clone());
        let y = lin.forward(tape, s, xv)?;
        let y = tape.tanh(y);
        let hv = tape.constant(h0.clone());
        let h = gru.forward(tape, s, y, hv)?;
        let mu = tape.scale(h, 0.5);
        let ls = tape.affine(h, 0.3, -0.2);
        let sample = gaussian_sample(tape, mu, ls, &mut ChaCha8Rng::seed_from_u64(9))?;
        weighted(tape, sample, &w)
    })
    .unwrap();
    out.push(("linear+gru+gaussian_sample".into(), r));
    out
}

fn three_agent_buffer() -> PretrainBuffer {
    let task = TaskConfig {
        task_kind: TaskKind::Random,
        map_size: 8,
        n_omnivores: 3,
        n_food: 4,
        max_steps: 3,
        view_radius: 1,
        ..TaskConfig::default()
    };
    collect_random(&task, 2, 3).unwrap()
}

fn nvif_loss_report() -> GradCheckReport {
    let buffer = three_agent_buffer();
    let config = NvifConfig {
        d_o: 4,
        d_h: 5,
        d_s: 3,
        layers: 2,
        decoder_hidden: 6,
        alpha: 0.5,
    };
    let model = NvifModel::new(config, buffer.obs_len, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let features: Vec<Vec<Array>> = buffer
        .episodes
        .iter()
        .map(|e| {
            e.steps
                .iter()
                .map(|s| Array::matrix(s.n(), 4, (0..s.n() * 4).map(|_| rng.sample(StandardNormal)).collect()))
                .collect()
        })
        .collect();
    assert_eq!(buffer.episodes[0].steps[0].n(), 3);
    let mut store = model.store.clone();
    check_gradients(&mut store, GRAD_STEP, None, |tape, s| {
        let eps: Vec<(&[_], &[Array])> = buffer
            .episodes
            .iter()
            .zip(&features)
            .map(|(e, f)| (e.steps.as_slice(), f.as_slice()))
            .collect();
        let mut noise = ChaCha8Rng::seed_from_u64(3);
        Ok(batch_loss(tape, &model, s, &eps, GraphMode::Neighbor, &mut noise).expect("loss builds").loss)
    })
    .unwrap()
}

#[test]
fn a01_gradient_correctness() {
    let t0 = Instant::now();
    let mut reports = op_reports();
    reports.push(("nvif loss, 3 agents".into(), nvif_loss_report()));
    let elapsed = t0.elapsed();
    let worst = reports
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .unwrap();
    let failing: Vec<&str> = reports
        .iter()
        .filter(|(_, r)| !(r.max_rel_error <= GRAD_REL_TOL) || r.checked == 0)
        .map(|(n, _)| n.as_str())
        .collect();
    let pass = failing.is_empty() && elapsed < GRAD_BUDGET;
    report(
        "01 gradient-correctness",
        pass,
        &format!(
            "{} cases, worst {} rel err {:.2e}, failing {:?}, {:.1?}",
            reports.len(),
            worst.0,
            worst.1.max_rel_error,
            failing,
            elapsed
        ),
    );
    assert!(failing.is_empty(), "gradient mismatch in {failing:?}");
    assert!(elapsed < GRAD_BUDGET, "took {elapsed:?}");
}

// ---------------------------------------------------------------- info flow

fn random_history(rng: &mut ChaCha8Rng) -> Vec<NeighborGraph> {
    let n = rng.random_range(1..=INFO_MAX_AGENTS);
    let horizon = rng.random_range(1..=INFO_MAX_T);
    let density: f64 = rng.random_range(0.0..0.6);
    let mut alive: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        if alive.len() > 1 && rng.random_bool(0.15) {
            let k = rng.random_range(0..alive.len());
            alive.remove(k);
        }
        let mut edges = Vec::new();
        for (x, &i) in alive.iter().enumerate() {
            for &j in &alive[x + 1..] {
                if rng.random_bool(density) {
                    edges.push((i, j));
                }
            }
        }
        history.push(NeighborGraph::from_edges(&alive, &edges).unwrap());
    }
    history
}

#[test]
fn a02_info_flow_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut compared, mut mismatches) = (0usize, 0usize);
    for _ in 0..INFO_EPISODES {
        let history = random_history(&mut rng);
        let unrolled = info_unrolled(&history).unwrap();
        for (t, sets) in unrolled.iter().enumerate() {
            for &i in history[t].ids() {
                compared += 1;
                if sets[&i] != info_direct(&history, i, t).unwrap() {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = t0.elapsed();
    let pass = mismatches == 0 && elapsed < INFO_BUDGET;
    report(
        "02 info-flow-equivalence",
        pass,
        &format!("{INFO_EPISODES} episodes, {compared} sets compared, {mismatches} mismatches, {elapsed:.1?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- KL

fn kl_monte_carlo(mu: &[f64], log_sigma: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for (&m, &ls) in mu.iter().zip(log_sigma) {
            let e: f64 = rng.sample(StandardNormal);
            let s = m + ls.exp() * e;
            // log q(s) − log p(s); the 2π terms cancel.
            log_ratio += -ls - 0.5 * e * e + 0.5 * s * s;
        }
        acc += log_ratio;
    }
    acc / samples as f64
}

#[test]
fn a03_kl_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..KL_CASES {
        let d = rng.random_range(1..=3);
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ls: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5f64..0.4)).collect();
        let exact = kl_divergence(&mu, &ls);
        let mc = kl_monte_carlo(&mu, &ls, KL_SAMPLES, &mut rng);
        worst = worst.max((exact - mc).abs());
    }
    let zero = kl_divergence(&[0.0; 4], &[0.0; 4]);
    let pass = worst <= KL_TOL && zero == 0.0;
    report(
        "03 kl-closed-form",
        pass,
        &format!("{KL_CASES} cases × {KL_SAMPLES} samples, worst |Δ| {worst:.2e}, standard normal gives {zero}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- GAE

fn gae_double_sum(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let t_len = rewards.len();
    (0..t_len)
        .map(|t| {
            (t..t_len)
                .map(|l| {
                    let delta = rewards[l] + gamma * values[l + 1] - values[l];
                    (gamma * lambda).powi((l - t) as i32) * delta
                })
                .sum()
        })
        .collect()
}

#[test]
fn a04_gae_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..GAE_EPISODES {
        let t_len = rng.random_range(1..=GAE_MAX_T);
        let gamma = rng.random_range(0.5..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let rewards: Vec<f64> = (0..t_len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let values: Vec<f64> = (0..=t_len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let fast = compute_gae(&rewards, &values, gamma, lambda).unwrap();
        let slow = gae_double_sum(&rewards, &values, gamma, lambda);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    let pass = worst <= GAE_TOL;
    report("04 gae-oracle", pass, &format!("{GAE_EPISODES} episodes, worst |Δ| {worst:.2e}"));
    assert!(pass);
}

// ---------------------------------------------------------------- additive toy

#[test]
fn a05_additive_task_identities() {
    let mdp = ToyMdp::example();
    let v1 = mdp.agent_values(0).unwrap();
    let v2 = mdp.agent_values(1).unwrap();
    let team = mdp.team_values([1.0, 1.0]).unwrap();
    let value_err = team
        .iter()
        .zip(v1.iter().zip(&v2))
        .map(|(t, (a, b))| (t - (a + b)).abs())
        .fold(0.0, f64::max);

    let (gamma, lambda) = (mdp.gamma, 0.5);
    let mut gae_exact = true;
    let mut checked = 0;
    for joint in [vec![(0, 0), (1, 0)], vec![(0, 1)], vec![(1, 1), (0, 1)], vec![(1, 0)]] {
        let traj = mdp.trajectory(&joint);
        let mut states: Vec<usize> = traj.iter().map(|s| s.state).collect();
        states.push(mdp.terminal());
        let r = |i: usize| traj.iter().map(|s| s.rewards[i]).collect::<Vec<f64>>();
        let vals = |v: &[f64]| states.iter().map(|&s| v[s]).collect::<Vec<f64>>();
        let a1 = compute_gae(&r(0), &vals(&v1), gamma, lambda).unwrap();
        let a2 = compute_gae(&r(1), &vals(&v2), gamma, lambda).unwrap();
        let team_r: Vec<f64> = traj.iter().map(|s| s.rewards[0] + s.rewards[1]).collect();
        let team_v: Vec<f64> = states.iter().map(|&s| v1[s] + v2[s]).collect();
        let at = compute_gae(&team_r, &team_v, gamma, lambda).unwrap();
        for k in 0..at.len() {
            checked += 1;
            gae_exact &= at[k] == a1[k] + a2[k];
        }
    }
    let pass = value_err <= TOY_VALUE_TOL && gae_exact;
    report(
        "05 additive-task-identities",
        pass,
        &format!("value identity max err {value_err:.1e}, team advantage exact on {checked} steps: {gae_exact}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- alignment

#[test]
fn a06_alignment_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..ALIGNMENT_VECTORS {
        let n = rng.random_range(1..=16);
        let c = rng.random_range(0.1..5.0);
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let ratios: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..1.2)).collect();
        let r = alignment_check(&adv, &vec![c; n], &ratios, &vec![0.0; n]).unwrap();
        if !(r.equal_weights && r.sign_ok && r.dot_approx >= 0.0) {
            violations += 1;
        }
    }
    let mut counterexample = None;
    for _ in 0..100_000 {
        let adv: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..5.0)).collect();
        let r = alignment_check(&adv, &w, &[1.0; 3], &[0.0; 3]).unwrap();
        if r.dot_approx < 0.0 {
            counterexample = Some((adv, w, r.dot_approx));
            break;
        }
    }
    let pass = violations == 0 && counterexample.is_some();
    let ce = counterexample
        .as_ref()
        .map(|(a, w, d)| format!("unequal weights A={a:.3?} w={w:.3?} give {d:.4}"))
        .unwrap_or_else(|| "no unequal-weight counterexample found".into());
    report(
        "06 alignment-inequality",
        pass,
        &format!("{ALIGNMENT_VECTORS} equal-weight vectors, {violations} violations; {ce}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- pre-training

fn fit_compressor(buffer: &PretrainBuffer) -> ObsCompressor {
    let cfg = ObsVaeConfig::default();
    let mut c = ObsCompressor::new(buffer.obs_len, &cfg).unwrap();
    c.train(&buffer.all_obs(), &cfg).unwrap();
    c
}

/// Learning has visibly started once reconstruction halved and the
/// consistency term went below its first-epoch value.
fn pretraining_met(h: &[PretrainEpoch]) -> bool {
    let (first, last) = (&h[0].loss, &h[h.len() - 1].loss);
    h.len() > 1 && last.recon <= PRETRAIN_RECON_RATIO * first.recon && last.consistency < first.consistency
}

#[test]
fn a07_pretraining_smoke() {
    let t0 = Instant::now();
    let task = TaskConfig::preset("desk-random-12").unwrap();
    assert_eq!(task.n_omnivores, 4);
    let buffer = collect_random(&task, PRETRAIN_EPISODES, 1).unwrap();
    let features = encode_buffer(&fit_compressor(&buffer), &buffer).unwrap();
    let (mut ratios, mut deltas, mut epochs) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let mut model = NvifModel::new(NvifConfig::default(), buffer.obs_len, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let cfg = PretrainConfig {
            epochs: PRETRAIN_MAX_EPOCHS,
            seed,
            ..PretrainConfig::default()
        };
        let h = pretrain(&mut model, &buffer, &features, &cfg, pretraining_met).unwrap();
        let (first, last) = (h[0].loss, h[h.len() - 1].loss);
        ratios.push(last.recon / first.recon);
        deltas.push(last.consistency - first.consistency);
        epochs.push(h.len() as f64);
    }
    let elapsed = t0.elapsed();
    let (ratio, delta) = (median(ratios.clone()), median(deltas.clone()));
    let pass = ratio <= PRETRAIN_RECON_RATIO && delta < 0.0 && elapsed < PRETRAIN_BUDGET;
    report(
        "07 pretraining-smoke",
        pass,
        &format!(
            "median recon ratio {ratio:.3} (per seed {ratios:.3?}), median consistency change {delta:.4}, epochs {epochs:?}, {elapsed:.0?}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- trends

const TREND_CORPUS: usize = 100;
const TREND_NVIF_EPOCHS: usize = 20;
/// Epochs averaged for the "final" return.
const FINAL_WINDOW: usize = 10;

fn pretrained(task: &TaskConfig) -> (ObsCompressor, NvifModel) {
    let buffer = collect_random(task, TREND_CORPUS, 1).unwrap();
    let compressor = fit_compressor(&buffer);
    let features = encode_buffer(&compressor, &buffer).unwrap();
    let mut model = NvifModel::new(NvifConfig::default(), buffer.obs_len, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let cfg = PretrainConfig {
        epochs: TREND_NVIF_EPOCHS,
        ..PretrainConfig::default()
    };
    pretrain(&mut model, &buffer, &features, &cfg, |_| false).unwrap();
    (compressor, model)
}

fn run_ppo(
    task: &TaskConfig,
    parts: &(ObsCompressor, NvifModel),
    kind: LatentKind,
    seed: u64,
    stop: impl FnMut(&EpochMetrics) -> bool,
) -> Vec<EpochMetrics> {
    let featurizer = Featurizer::new(parts.0.clone());
    let encoder = kind.needs_encoder().then(|| parts.1.clone());
    let source = make_source(kind, encoder, featurizer.width()).unwrap();
    let hyper = PpoHyper {
        seed,
        epochs: EPISODE_CAP / PpoHyper::default().episodes_per_epoch,
        ..PpoHyper::default()
    };
    train_nvif_ppo(task, featurizer, source, &hyper, stop).unwrap().1
}

#[test]
fn a08_end_to_end_trends() {
    let t0 = Instant::now();
    let per_epoch = PpoHyper::default().episodes_per_epoch;

    let normal = TaskConfig::preset("desk-normal-16").unwrap();
    assert_eq!(normal.n_omnivores, 8);
    let parts = pretrained(&normal);
    let mut reach = Vec::new();
    for seed in SEEDS {
        let h = run_ppo(&normal, &parts, LatentKind::Nvif, seed, |m| m.food_eaten_frac >= FOOD_TARGET);
        let hit = h.iter().find(|m| m.food_eaten_frac >= FOOD_TARGET).map(|m| m.epoch * per_epoch);
        reach.push(hit.map_or(f64::INFINITY, |e| e as f64));
    }
    let reach_median = median(reach.clone());

    let random = TaskConfig::preset("desk-random-16").unwrap();
    let parts = pretrained(&random);
    let final_return = |h: &[EpochMetrics]| {
        let tail = &h[h.len().saturating_sub(FINAL_WINDOW)..];
        tail.iter().map(|m| m.mean_return).sum::<f64>() / tail.len() as f64
    };
    let (mut nvif, mut ippo) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        nvif.push(final_return(&run_ppo(&random, &parts, LatentKind::Nvif, seed, |_| false)));
        ippo.push(final_return(&run_ppo(&random, &parts, LatentKind::Ippo, seed, |_| false)));
    }
    let (nvif_m, ippo_m) = (median(nvif.clone()), median(ippo.clone()));
    let elapsed = t0.elapsed();
    let reach_ok = reach_median <= EPISODE_CAP as f64;
    let order_ok = nvif_m >= ippo_m;
    let pass = reach_ok && order_ok && elapsed < TREND_BUDGET;
    report(
        "08 end-to-end-trends",
        pass,
        &format!(
            "normal-16 episodes to {FOOD_TARGET} food: median {reach_median} {reach:?}; \
             random-16 final return nvif {nvif_m:.2} {nvif:.2?} vs ippo {ippo_m:.2} {ippo:.2?}; {elapsed:.0?}"
        ),
    );
    assert!(reach_ok, "food target not reached within {EPISODE_CAP} episodes: {reach:?}");
    assert!(order_ok, "nvif median {nvif_m} below ippo median {ippo_m}");
    assert!(elapsed < TREND_BUDGET);
}

// ---------------------------------------------------------------- clip objective

fn actor_ids(net: &ActorCritic) -> Vec<ParamId> {
    net.store.ids().filter(|&id| net.store.name(id).starts_with("actor")).collect()
}

fn vanilla_pg(net: &ActorCritic, batch: &PpoBatch) -> f64 {
    let p = net.probabilities(&batch.inputs).unwrap();
    let m = batch.len() as f64;
    (0..batch.len())
        .map(|r| batch.advantages[r] * p.get(r, batch.actions[r]).ln())
        .sum::<f64>()
        / m
}

#[test]
fn a09_clip_objective_cases() {
    let up = clip_term(1.3, 1.0, 0.2);
    let down = clip_term(1.3, -1.0, 0.2);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = ActorCritic::new(5, 3, &NetworkConfig { hidden: 8 }, &mut rng).unwrap();
    let m = 12;
    let inputs = Array::matrix(m, 8, (0..m * 8).map(|_| rng.sample(StandardNormal)).collect());
    let probs = net.probabilities(&inputs).unwrap();
    let actions: Vec<usize> = (0..m).map(|_| rng.random_range(0..probs.cols())).collect();
    let batch = PpoBatch {
        old_probs: (0..m).map(|r| probs.get(r, actions[r])).collect(),
        advantages: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        returns: vec![0.0; m],
        inputs,
        actions,
    };
    let grads = {
        let mut tape = Tape::new();
        let terms = ppo_actor_terms(&mut tape, &net, &net.store, &batch, 0.2, 0.0).unwrap();
        tape.backward(terms.surrogate).unwrap()
    };
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for id in actor_ids(&net) {
        let analytic = grads.get(&net.store, id).map(|g| g.data().to_vec()).unwrap();
        for (k, &a) in analytic.iter().enumerate() {
            let orig = net.store.value(id).data()[k];
            net.store.value_mut(id).data_mut()[k] = orig + h;
            let plus = vanilla_pg(&net, &batch);
            net.store.value_mut(id).data_mut()[k] = orig - h;
            let minus = vanilla_pg(&net, &batch);
            net.store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
        }
    }
    let pass = up == 1.2 && down == -1.3 && worst <= CLIP_GRAD_TOL;
    report(
        "09 clip-objective-cases",
        pass,
        &format!("ρ=1.3, A=1 gives {up}; ρ=1.3, A=-1 gives {down}; gradient at ρ=1 vs policy gradient, worst rel err {worst:.2e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- determinism

fn small_config(dir: &Path) -> ExperimentConfig {
    let json = serde_json::json!({
        "task": "desk-random-12",
        "algorithm": "nvif-ppo",
        "seeds": [3],
        "output_dir": dir,
        "checkpoint_every": 2,
        "nvif": {"corpus_episodes": 8, "obs_vae": {"epochs": 1}, "pretrain": {"epochs": 2}},
        "ppo": {"epochs": 6, "episodes_per_epoch": 2, "minibatch": 64}
    });
    ExperimentConfig::from_json(&json.to_string()).unwrap()
}

fn metrics_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    std::fs::read(cfg.seed_dir(3).join(METRICS_FILE)).unwrap()
}

#[test]
fn a10_determinism_and_resume() {
    let root = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let cfg = small_config(&root.path().join(name));
        harness::pretrain_obs(&cfg).unwrap();
        harness::pretrain_nvif(&cfg).unwrap();
        cfg
    };

    let a = run("a");
    harness::train(&a, TrainOptions::default()).unwrap();
    let b = run("b");
    harness::train(&b, TrainOptions::default()).unwrap();
    let rerun_same = metrics_bytes(&a) == metrics_bytes(&b);

    // Interrupted after epoch 2, resumed, interrupted again after epoch 3,
    // then resumed from the stale epoch-2 checkpoint.
    let c = run("c");
    let seed_dir = c.seed_dir(3);
    harness::train(&c, TrainOptions { resume: false, stop_after: Some(2) }).unwrap();
    let stash = root.path().join("stash");
    std::fs::create_dir_all(&stash).unwrap();
    for f in ["policy.json", "policy.bin"] {
        std::fs::copy(seed_dir.join(f), stash.join(f)).unwrap();
    }
    harness::train(&c, TrainOptions { resume: true, stop_after: Some(3) }).unwrap();
    for f in ["policy.json", "policy.bin"] {
        std::fs::copy(stash.join(f), seed_dir.join(f)).unwrap();
    }
    harness::train(&c, TrainOptions { resume: true, stop_after: None }).unwrap();
    let resumed_same = metrics_bytes(&a) == metrics_bytes(&c);
    let rows = String::from_utf8(metrics_bytes(&a)).unwrap().lines().count() - 1;

    let pass = rerun_same && resumed_same && rows == 6;
    report(
        "10 determinism-and-resume",
        pass,
        &format!("{rows} epochs; rerun identical: {rerun_same}; resumed run identical: {resumed_same}"),
    );
    assert!(pass);
}
