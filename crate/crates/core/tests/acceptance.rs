//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any binding criterion fails.

mod common;

use std::collections::{BTreeSet, VecDeque};
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tent_core::adaptation::{build_query_subgraph, class_ego_structure, film_adapt};
use tent_core::autodiff::Tape;
use tent_core::episodes::{stream, EpisodeStream, TaskShape};
use tent_core::harness::train::init_model;
use tent_core::harness::{
    episode_forward, first_step_embeddings, generate_sbm, meta_eval, meta_train, run_ablation, GraphContext, SbmParams,
    TrainConfig, TrainOutcome, Variant,
};
use tent_core::matching::{adaptive_temperatures, info_loss, DEGENERATE_SPREAD};
use tent_core::{Graph, LocalNode};

struct Verdict {
    pass: Option<bool>,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass: Some(pass), detail }
}

fn gradient_suite() -> Verdict {
    let started = Instant::now();
    let mut worst = (0.0f64, String::new());
    for i in 0..20u64 {
        let n = 2 + (i as usize % 2);
        let k = 1 + (i as usize / 2 % 2);
        let dim = (4 + i as usize % 5).max(n + 2);
        let t = common::tiny_episode(100 + i, n, k, dim, 0.3);
        let (err, at) = common::max_gradient_error(&t.model, &t.graph, &t.task, Variant::Full, 1.0, 1e-6);
        if err > worst.0 {
            worst = (err, format!("episode {i} group {at}"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst.0 < 1e-4 && secs < 120.0,
        format!("20 episodes, max relative error {:.2e} ({}), {secs:.1}s", worst.0, worst.1),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0))
}

/// Direct transcription: sum over queries of the negative log softmax of
/// cosine similarity over temperature, evaluated with plain loops.
fn brute_force_info_loss(q: &Array2<f64>, s: &Array2<f64>, tau: &[f64], slots: &[usize]) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut total = 0.0;
    for (i, &y) in slots.iter().enumerate() {
        let qi = q.row(i).to_vec();
        let logits: Vec<f64> = (0..s.nrows()).map(|j| cos(&qi, &s.row(j).to_vec()) / tau[j]).collect();
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        total -= (logits[y].exp() / denom).ln();
    }
    total
}

fn loss_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        let queries = rng.gen_range(1..=12);
        let dim = rng.gen_range(2..=10);
        let q = random_matrix(&mut rng, queries, dim);
        let s = random_matrix(&mut rng, n, dim);
        let tau: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..3.0)).collect();
        let slots: Vec<usize> = (0..queries).map(|_| rng.gen_range(0..n)).collect();
        let got = info_loss(&q, &s, &tau, &slots).unwrap();
        let want = brute_force_info_loss(&q, &s, &tau, &slots);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    verdict(worst <= 1e-12, format!("100 episodes, max deviation {worst:.2e}"))
}

fn temperature_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mean_err = 0.0f64;
    let mut scale_err = 0.0f64;
    let mut unexpected_fallback = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=6);
        let k = rng.gen_range(1..=5);
        let dim = rng.gen_range(2..=8);
        let supports: Vec<Array2<f64>> = (0..n).map(|_| random_matrix(&mut rng, k, dim)).collect();
        let protos: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let t = adaptive_temperatures(&supports, &protos).unwrap();
        unexpected_fallback += usize::from(t.fallback);
        mean_err = mean_err.max((t.tau.iter().sum::<f64>() / n as f64 - 1.0).abs());

        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let scaled: Vec<Array2<f64>> = supports
            .iter()
            .zip(&protos)
            .map(|(s, p)| Array2::from_shape_fn(s.dim(), |(r, j)| p[j] + c * (s[[r, j]] - p[j])))
            .collect();
        let ts = adaptive_temperatures(&scaled, &protos).unwrap();
        for (a, b) in t.tau.iter().zip(&ts.tau) {
            scale_err = scale_err.max((a - b).abs() / a.abs().max(1.0));
        }
    }

    // One class spread `d` along one axis, the other class collapsed: the
    // total spread is exactly `d`.
    let fallback_at = |d: f64| {
        let supports = vec![Array2::from_elem((1, 1), d), Array2::zeros((1, 1))];
        let t = adaptive_temperatures(&supports, &[vec![0.0], vec![0.0]]).unwrap();
        (t.fallback, t.tau)
    };
    let below = fallback_at(DEGENERATE_SPREAD * (1.0 - 1e-9));
    let at = fallback_at(DEGENERATE_SPREAD);
    let above = fallback_at(DEGENERATE_SPREAD * (1.0 + 1e-9));
    let boundary_ok = below.0 && below.1 == vec![1.0, 1.0] && !at.0 && !above.0;

    verdict(
        mean_err <= 1e-9 && scale_err <= 1e-9 && unexpected_fallback == 0 && boundary_ok,
        format!(
            "1000 episodes, max |mean-1| {mean_err:.2e}, max scaling drift {scale_err:.2e}, fallback boundary {}",
            if boundary_ok { "exact" } else { "wrong" }
        ),
    )
}

fn film_identity() -> Verdict {
    let (g, split) = generate_sbm(&SbmParams::small(0)).unwrap();
    let cfg = TrainConfig::default();
    let model = init_model(&g, &split, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let theta_bits = bits(model.theta.values());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bitwise = true;
    for _ in 0..20 {
        let rows = rng.gen_range(1..=10);
        let context = random_matrix(&mut rng, rows, cfg.hidden_dim);
        let adapted = film_adapt(&model.theta, &context, &model.adapter).unwrap();
        bitwise &= bits(adapted.values()) == theta_bits;
    }

    let ctx = GraphContext::new(&g);
    let tasks = EpisodeStream::new(&g, &split.novel, cfg.episodes.test_shape(), 0, stream::TEST).take(20).unwrap();
    let mut logit_gap = 0.0f64;
    for task in &tasks {
        let mut tape = Tape::new();
        let vars = model.to_tape(&mut tape);
        let h = first_step_embeddings(&mut tape, &vars, &model, &ctx, None).unwrap();
        let full = episode_forward(&mut tape, &vars, &model, &g, h, task, Variant::Full, None, None).unwrap();
        for &theta_i in &full.adapted {
            bitwise &= bits(tape.value(theta_i).as_slice().unwrap()) == theta_bits;
        }
        let plain = episode_forward(&mut tape, &vars, &model, &g, h, task, Variant::NoClass, None, None).unwrap();
        for (a, b) in tape.value(full.logits).iter().zip(tape.value(plain.logits)) {
            logit_gap = logit_gap.max((a - b).abs());
        }
    }
    verdict(
        bitwise && logit_gap <= 1e-12,
        format!(
            "adapted parameters {} to the shared encoder, full vs no_class logit gap {logit_gap:.2e} over 20 tasks",
            if bitwise { "bitwise equal" } else { "differ" }
        ),
    )
}

fn random_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.gen_range(5..=40);
    let p = rng.gen_range(0.02..0.3);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let labels = (0..n).map(|v| (v % 3) as i64).collect();
    Graph::from_edges(&edges, Array2::zeros((n, 1)), labels).unwrap()
}

fn all_edges(g: &Graph) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for u in 0..g.node_count() {
        for &v in g.adjacency().row(u) {
            if u < v {
                out.push((u, v));
            }
        }
    }
    out
}

fn induced_edges(g: &Graph, nodes: &BTreeSet<usize>) -> BTreeSet<(usize, usize)> {
    all_edges(g).into_iter().filter(|(u, v)| nodes.contains(u) && nodes.contains(v)).collect()
}

/// Real node set and real-real edges (global ids) of a subgraph, plus the
/// real endpoints of edges touching a virtual node.
fn decode(sg: &tent_core::Subgraph) -> (BTreeSet<usize>, BTreeSet<(usize, usize)>, Vec<usize>) {
    let id = |i: usize| match sg.nodes[i] {
        LocalNode::Real(v) => Some(v),
        LocalNode::Virtual => None,
    };
    let nodes = sg.real_nodes().collect();
    let mut edges = BTreeSet::new();
    let mut virtual_edges = Vec::new();
    for a in 0..sg.len() {
        for &b in sg.adjacency.row(a) {
            match (id(a), id(b)) {
                (Some(u), Some(v)) if u < v => {
                    edges.insert((u, v));
                }
                (None, Some(v)) => virtual_edges.push(v),
                _ => {}
            }
        }
    }
    virtual_edges.sort_unstable();
    (nodes, edges, virtual_edges)
}

fn bfs_ball(g: &Graph, q: usize, depth: usize) -> BTreeSet<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    dist[q] = 0;
    let mut queue = VecDeque::from([q]);
    while let Some(u) = queue.pop_front() {
        for &w in g.adjacency().row(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    (0..g.node_count()).filter(|&v| dist[v] <= depth).collect()
}

fn subgraph_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    for trial in 0..500 {
        let g = random_graph(&mut rng);
        let k = rng.gen_range(1..=5.min(g.node_count()));
        let mut support: Vec<usize> = (0..g.node_count()).collect();
        for i in 0..k {
            let j = rng.gen_range(i..support.len());
            support.swap(i, j);
        }
        support.truncate(k);

        let (sg, _) = class_ego_structure(&g, &support).unwrap();
        let (nodes, edges, virtual_edges) = decode(&sg);
        let mut expected: BTreeSet<usize> = support.iter().copied().collect();
        for &s in &support {
            expected.extend(g.adjacency().row(s));
        }
        let mut sorted_support = support.clone();
        sorted_support.sort_unstable();
        let virtual_count = sg.nodes.iter().filter(|n| **n == LocalNode::Virtual).count();
        let ego_ok = virtual_count == 1
            && sg.centroid_index == 0
            && sg.nodes[0] == LocalNode::Virtual
            && sg.adjacency.row(0).len() == k
            && virtual_edges == sorted_support
            && nodes == expected
            && edges == induced_edges(&g, &expected);

        let q = rng.gen_range(0..g.node_count());
        let qsg = build_query_subgraph(&g, q).unwrap();
        let (qnodes, qedges, qvirtual) = decode(&qsg);
        let ball = bfs_ball(&g, q, 2);
        let query_ok = qvirtual.is_empty()
            && qsg.nodes[qsg.centroid_index] == LocalNode::Real(q)
            && qnodes == ball
            && qedges == induced_edges(&g, &ball);

        if !(ego_ok && query_ok) {
            failures.push(trial);
        }
    }
    verdict(
        failures.is_empty(),
        format!("500 class-ego and 500 query subgraphs, {} mismatches {:?}", failures.len(), failures),
    )
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn accuracies(outcomes: &[TrainOutcome], variant: Variant) -> Vec<f64> {
    outcomes
        .iter()
        .filter(|o| o.record.variant == variant)
        .map(|o| o.record.test_accuracy_mean)
        .collect()
}

fn end_to_end(outcomes: &[TrainOutcome]) -> Verdict {
    let full = accuracies(outcomes, Variant::Full);
    let proto = accuracies(outcomes, Variant::ProtoNet);
    let hits = full.iter().filter(|&&a| a >= 0.90).count();
    let slowest = outcomes
        .iter()
        .filter(|o| o.record.variant == Variant::Full)
        .map(|o| o.record.wall_clock_secs)
        .fold(0.0, f64::max);
    let fmt = |xs: &[f64]| xs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    verdict(
        hits >= 4 && mean(&proto) >= 0.60 && slowest < 600.0,
        format!(
            "full [{}] ({hits}/5 >= 0.90), protonet [{}] mean {:.3}, slowest full run {slowest:.0}s",
            fmt(&full),
            fmt(&proto),
            mean(&proto)
        ),
    )
}

fn ablation_ordering(outcomes: &[TrainOutcome]) -> Verdict {
    let full = mean(&accuracies(outcomes, Variant::Full));
    let mut ok = true;
    let mut parts = vec![format!("full {full:.3}")];
    for v in [Variant::NoNode, Variant::NoClass, Variant::NoTask] {
        let m = mean(&accuracies(outcomes, v));
        ok &= full >= m;
        parts.push(format!("{v} {m:.3} (delta {:+.3})", full - m));
    }
    verdict(ok, parts.join(", "))
}

fn determinism(cfg: &TrainConfig, g: &Graph, split: &tent_core::ClassSplit, first: &TrainOutcome) -> Verdict {
    let second = meta_train(g, split, cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    tent_core::harness::persist::write_summary(&a, &first.record).unwrap();
    tent_core::harness::persist::write_summary(&b, &second.record).unwrap();
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    verdict(a == b, format!("summary.json of two identical runs: {} bytes, {}", a.len(), if a == b { "identical" } else { "differ" }))
}

fn chance_level(g: &Graph, split: &tent_core::ClassSplit) -> Verdict {
    let cfg = TrainConfig::default();
    let model = init_model(g, split, &cfg).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [2usize, 5] {
        let shape = TaskShape {
            n_way: n,
            k_shot: cfg.episodes.k_shot,
            query_size: cfg.episodes.query_size,
        };
        let acc = meta_eval(&model, g, &split.novel, shape, cfg.seed, 500, Variant::Full).unwrap().mean;
        let p = 1.0 / n as f64;
        let sigma = (p * (1.0 - p) / (500.0 * shape.query_size as f64)).sqrt();
        let z = (acc - p) / sigma;
        ok &= z.abs() <= 3.0;
        parts.push(format!("N={n}: {acc:.4} vs {p:.3} ({z:+.2} sigma)"));
    }
    verdict(ok, parts.join(", "))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Verdict)> = vec![
        ("gradient suite", gradient_suite()),
        ("loss oracle", loss_oracle()),
        ("temperature invariants", temperature_invariants()),
        ("film identity", film_identity()),
        ("subgraph structure", subgraph_suite()),
    ];

    let (g, split) = generate_sbm(&SbmParams::small(0)).unwrap();
    let cfg = TrainConfig::default();
    let outcomes = run_ablation(&g, &split, &cfg, &Variant::ALL, &[0, 1, 2, 3, 4]).unwrap();
    results.push(("end-to-end sbm-small", end_to_end(&outcomes)));
    results.push(("ablation ordering", ablation_ordering(&outcomes)));
    let first_full = outcomes.iter().find(|o| o.record.variant == Variant::Full && o.record.seed == 0).unwrap();
    results.push(("determinism", determinism(&cfg, &g, &split, first_full)));
    results.push(("chance level", chance_level(&g, &split)));
    results.push((
        "cora-full stretch",
        Verdict {
            pass: None,
            detail: "not run: dataset unavailable offline; reference 69.24 +- 4.49, non-binding".into(),
        },
    ));

    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        let tag = match v.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "INFO",
        };
        println!("[{tag}] {} {name}: {}", i + 1, v.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} binding criteria failed");
        ExitCode::FAILURE
    }
}
