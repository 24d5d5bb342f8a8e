//! Library routines against naive loop implementations written from their
//! definitions.

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stdemand::eval::compute_metrics;
use stdemand::graphs::{build_shift, functional_edges};
use stdemand::ingest::DemandTensor;
use stdemand::model::{message_pass, ForwardConfig, GraphContext, ModelState};
use stdemand::synth::{gpvar_series_from, GpvarParams, HaBaseline, Nonlinearity};

const TOL: f64 = 1e-10;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Symmetric weights in (0, 1] with some pairs left unconnected.
fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.6) {
                let w = rng.random_range(0.05..1.0);
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    a
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mat_vec(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..v.len()).map(|j| m[[i, j]] * v[j]).sum()).collect()
}

#[test]
fn gpvar_matches_first_order_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [3, 5] {
        let a = random_adjacency(&mut rng, n);
        let s = build_shift(&a);
        let gain = Array1::from_shape_fn(n, |_| rng.random_range(0.5..1.5));
        let (psi0, psi1) = (0.5, 0.3);
        let params = GpvarParams::new(array![[psi0, psi1]], gain.clone(), 0.0, Nonlinearity::Identity).unwrap();
        let init = uniform(&mut rng, 1, n);
        let t_out = 40;
        let got = gpvar_series_from(&params, &s, &init, t_out, 9).unwrap();

        let burn = 10;
        let mut hist: Vec<Vec<f64>> = vec![init.row(0).to_vec()];
        while hist.len() < burn + t_out {
            let x = hist.last().unwrap();
            let sx = mat_vec(&s, x);
            hist.push((0..n).map(|i| gain[i] * (psi0 * x[i] + psi1 * sx[i])).collect());
        }
        let expected = Array2::from_shape_fn((n, t_out), |(i, k)| hist[burn + k][i]);
        assert!(max_abs_diff(&got, &expected) < TOL, "n = {n}: {}", max_abs_diff(&got, &expected));
    }
}

#[test]
fn gpvar_matches_two_lag_polynomial_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 4;
    let a = random_adjacency(&mut rng, n);
    let s = build_shift(&a);
    let s2 = s.dot(&s);
    let gain = Array1::from_shape_fn(n, |_| rng.random_range(0.5..2.0));
    let psi = array![[0.2, 0.15, 0.1], [-0.1, 0.2, 0.05]];
    let params = GpvarParams::new(psi.clone(), gain.clone(), 0.0, Nonlinearity::Tanh).unwrap();
    let init = uniform(&mut rng, 2, n);
    let t_out = 30;
    let got = gpvar_series_from(&params, &s, &init, t_out, 0).unwrap();

    let powers = [Array2::eye(n), s.clone(), s2];
    let mut hist: Vec<Vec<f64>> = vec![init.row(0).to_vec(), init.row(1).to_vec()];
    let burn = 20;
    while hist.len() < burn + t_out {
        let t = hist.len();
        let mut x = vec![0.0; n];
        for i in 0..n {
            let mut h = 0.0;
            for p in 1..=2 {
                for (l, sl) in powers.iter().enumerate() {
                    for j in 0..n {
                        h += psi[[p - 1, l]] * sl[[i, j]] * hist[t - p][j];
                    }
                }
            }
            x[i] = gain[i] * h.tanh();
        }
        hist.push(x);
    }
    let expected = Array2::from_shape_fn((n, t_out), |(i, k)| hist[burn + k][i]);
    assert!(max_abs_diff(&got, &expected) < TOL);
}

#[test]
fn functional_edges_match_pairwise_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..=5 {
        let vg = uniform(&mut rng, n, 4);
        let e = functional_edges(&vg);
        let mut naive = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += vg[[i, k]] * vg[[j, k]];
                }
                naive[[i, j]] = acc;
            }
        }
        assert!(max_abs_diff(&e, &naive) < TOL);
        assert_eq!(e, e.t());
    }
}

#[test]
fn shift_matches_loop_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 1..=5 {
        let a = random_adjacency(&mut rng, n);
        let s = build_shift(&a);
        let mut deg = vec![0.0; n];
        for i in 0..n {
            deg[i] = 1.0 + (0..n).map(|j| a[[i, j]]).sum::<f64>();
        }
        let mut naive = Array2::zeros((n, n));
        let mut rebuilt = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let m = if i == j { 1.0 + a[[i, j]] } else { a[[i, j]] };
                naive[[i, j]] = m / (deg[i] * deg[j]).sqrt();
                rebuilt[[i, j]] = deg[i].sqrt() * s[[i, j]] * deg[j].sqrt();
            }
        }
        assert!(max_abs_diff(&s, &naive) < TOL);
        let i_plus_a = &Array2::<f64>::eye(n) + &a;
        assert!(max_abs_diff(&rebuilt, &i_plus_a) < 1e-12);
    }
}

#[test]
fn shift_examples() {
    let s = build_shift(&array![[0.0, 1.0], [1.0, 0.0]]);
    assert!(max_abs_diff(&s, &array![[0.5, 0.5], [0.5, 0.5]]) < 1e-15);
    assert_eq!(build_shift(&Array2::zeros((3, 3))), Array2::<f64>::eye(3));
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.01 * x
    }
}

/// Gated mean-aggregated message passing written out entry by entry.
fn naive_message_pass(
    p: &stdemand::model::MpParams<f64>,
    cfg: &ForwardConfig,
    a: &Array2<f64>,
    h: &Array2<f64>,
    v: &Array2<f64>,
    vt: &Array2<f64>,
) -> Array2<f64> {
    let (n, dh, dn, dg) = (h.nrows(), cfg.hidden, cfg.node_dim, cfg.graph_dim);
    // hop distances by repeated relaxation
    let mut hops = vec![vec![usize::MAX; n]; n];
    for i in 0..n {
        hops[i][i] = 0;
        for _ in 0..n {
            for u in 0..n {
                for w in 0..n {
                    if a[[u, w]] > 0.0 && hops[i][u] != usize::MAX && hops[i][u] + 1 < hops[i][w] {
                        hops[i][w] = hops[i][u] + 1;
                    }
                }
            }
        }
    }
    let mut act = vec![vec![0.0; dg]; n];
    for i in 0..n {
        for g in 0..dg {
            let mut z = 0.0;
            for k in 0..dn {
                z += p.adapter[[g, k]] * v[[i, k]];
            }
            act[i][g] = leaky(z);
        }
    }
    let mut out = Array2::zeros((n, dh));
    for i in 0..n {
        let mut senders = Vec::new();
        for j in 0..n {
            let adj = cfg.use_adjacency_graph && j != i && hops[i][j] <= cfg.neighbor_order;
            if adj || (cfg.use_llm_graph && j != i) {
                senders.push(j);
            }
        }
        let mut agg = vec![0.0; dh];
        for &j in &senders {
            let a_ij = if cfg.use_adjacency_graph { a[[i, j]] } else { 0.0 };
            let e_ij = if cfg.use_llm_graph { (0..dg).map(|g| act[i][g] * act[j][g]).sum() } else { 0.0 };
            let mut input = Vec::new();
            input.extend(h.row(i).iter());
            input.extend(vt.row(i).iter());
            input.extend(h.row(j).iter());
            input.push(a_ij);
            input.push(e_ij);
            let mut m = vec![0.0; dh];
            for c in 0..dh {
                let mut z = p.msg_b[c];
                for (k, x) in input.iter().enumerate() {
                    z += p.msg_w[[c, k]] * x;
                }
                m[c] = z.max(0.0);
            }
            let mut g = p.gate_b[0];
            for c in 0..dh {
                g += p.gate_w[[0, c]] * m[c];
            }
            let alpha = 1.0 / (1.0 + (-g).exp());
            for c in 0..dh {
                agg[c] += alpha * m[c] / senders.len() as f64;
            }
        }
        for c in 0..dh {
            let mut z = agg[c];
            for k in 0..dh {
                z += p.node_w[[c, k]] * h[[i, k]];
            }
            out[[i, c]] = z.max(0.0);
        }
    }
    out
}

#[test]
fn message_pass_matches_naive_loops() {
    let base = ForwardConfig { hidden: 5, node_dim: 3, graph_dim: 4, window: 2, horizon: 2, ..Default::default() };
    let variants = [
        base.clone(),
        ForwardConfig { use_llm_graph: false, ..base.clone() },
        ForwardConfig { use_adjacency_graph: false, ..base.clone() },
        ForwardConfig { neighbor_order: 2, use_llm_graph: false, ..base.clone() },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for cfg in &variants {
        for n in 2..=5 {
            let state = ModelState::<f64>::init(cfg, 6, &mut rng).unwrap();
            let mut p = state.mp[0].clone();
            p.msg_b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            p.gate_b[0] = rng.random_range(-0.5..0.5);
            let a = random_adjacency(&mut rng, n);
            let h = uniform(&mut rng, n, cfg.hidden).mapv(f64::abs);
            let v = uniform(&mut rng, n, cfg.node_dim);
            let vt = uniform(&mut rng, n, cfg.node_dim);
            let graph = GraphContext::<f64>::new(&a, cfg.neighbor_order);
            let got = message_pass(&p, cfg, &graph, &h, &v, &vt).unwrap();
            let want = naive_message_pass(&p, cfg, &a, &h, &v, &vt);
            assert!(max_abs_diff(&got, &want) < TOL, "{}", max_abs_diff(&got, &want));
        }
    }
}

#[test]
fn metric_two_point_example() {
    let pred = array![[0.0, 2.0]];
    let target = array![[0.0, 0.0]];
    let seen = array![[true, true]];
    let m = compute_metrics(pred.view(), target.view(), seen.view(), &[0]).unwrap();
    assert!((m.mae - 1.0).abs() < 1e-15);
    assert!((m.rmse - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn historical_average_matches_slot_means() {
    // three days of hourly data: value = hour + 10 * day
    let t = 72;
    let values = Array2::from_shape_fn((1, t), |(_, k)| (k % 24) as f64 + 10.0 * (k / 24) as f64);
    let demand = DemandTensor::observed(values.insert_axis(ndarray::Axis(1)), 3600, 1_704_067_200).unwrap();
    let ha = HaBaseline::fit(&demand, 0..t).unwrap();
    assert!(!ha.is_weekly());
    for hour in 0..24 {
        // mean over days 0, 1, 2 of hour + 10 * day
        let expected = hour as f64 + 10.0;
        assert!((ha.predict(0, 0, 72 + hour) - expected).abs() < 1e-12);
    }
}
