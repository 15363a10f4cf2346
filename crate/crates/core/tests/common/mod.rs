//! Helpers shared by the integration tests: fixture paths, independent
//! oracles and a minimal HTTP server for wire tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routerag::corpus::{load_corpus_dir, CorpusStore};
use routerag::embedding::{EmbeddingError, EmbeddingProvider};
use routerag::reward::{score_batch, GrpoConfig, RewardConfig, Stage};
use routerag::trainer::{
    rollout_group, FindProbability, QuestionType, SimEnv, SimTrajectory, TabularPolicy, GRAPH_EVIDENCE,
    PASSAGE_EVIDENCE,
};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn tiny_store() -> CorpusStore {
    load_corpus_dir(&fixtures().join("tiny")).expect("tiny fixture loads")
}

pub fn demo_store() -> CorpusStore {
    load_corpus_dir(&fixtures().join("demo")).expect("demo fixture loads")
}

/// Dense solution of `(I - d W) s = (1 - d) p`, where column `u` of `W` is
/// the out-distribution of `u` and dangling columns restart at `p`.
pub fn dense_ppr(n: usize, edges: &[(usize, usize, f64)], seeds: &[(usize, f64)], damping: f64) -> Vec<f64> {
    let mut p = DVector::<f64>::zeros(n);
    for &(u, w) in seeds {
        p[u] += w;
    }
    p /= p.sum();
    let mut out_weight = vec![0.0; n];
    let mut w = DMatrix::<f64>::zeros(n, n);
    for &(u, v, x) in edges {
        if x > 0.0 {
            w[(v, u)] += x;
            out_weight[u] += x;
        }
    }
    for (u, &total) in out_weight.iter().enumerate() {
        if total > 0.0 {
            for v in 0..n {
                w[(v, u)] /= total;
            }
        } else {
            for v in 0..n {
                w[(v, u)] = p[v];
            }
        }
    }
    let a = DMatrix::<f64>::identity(n, n) - w * damping;
    let b = p * (1.0 - damping);
    a.lu().solve(&b).expect("I - dW is non-singular for d < 1").iter().copied().collect()
}

/// Random weighted directed graph with at most `max_nodes` nodes, plus
/// random positive seeds and a damping factor in [0.1, 0.9].
pub struct RandomPprCase {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub seeds: Vec<(usize, f64)>,
    pub damping: f64,
}

pub fn random_ppr_case(rng: &mut ChaCha8Rng, max_nodes: usize) -> RandomPprCase {
    let n = rng.random_range(1..=max_nodes);
    let density = rng.random_range(0.0..0.3);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if rng.random::<f64>() < density {
                edges.push((u, v, rng.random_range(0.1..2.0)));
            }
        }
    }
    let k = rng.random_range(1..=n.min(5));
    let seeds = (0..k)
        .map(|_| (rng.random_range(0..n), rng.random_range(0.05..1.0)))
        .collect();
    RandomPprCase {
        n,
        edges,
        seeds,
        damping: rng.random_range(0.1..=0.9),
    }
}

/// Embeds every input as the same vector.
pub struct FixedEmbedder(pub Vec<f64>);

impl EmbeddingProvider for FixedEmbedder {
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(inputs.iter().map(|_| self.0.clone()).collect())
    }
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A request seen by [`MockServer`].
#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub path: String,
    pub headers: HashMap<String, String>,
    pub body: String,
}

pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub requests: Arc<std::sync::Mutex<Vec<SeenRequest>>>,
}

impl MockServer {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Serves `handler(request) -> (status, body)` on a loopback port until the
/// test process exits. One request per connection.
pub fn serve<F>(handler: F) -> MockServer
where
    F: Fn(&SeenRequest) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let requests = Arc::new(std::sync::Mutex::new(Vec::new()));
    let (h, r) = (hits.clone(), requests.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut headers = HashMap::new();
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                }
            }
            let len: usize = headers
                .get("content-length")
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            let mut body = vec![0; len];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let seen = SeenRequest {
                path,
                headers,
                body: String::from_utf8_lossy(&body).into_owned(),
            };
            h.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = handler(&seen);
            r.lock().unwrap().push(seen);
            let response = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    MockServer { url, hits, requests }
}

/// Random small environment for gradient checks.
pub fn random_env(rng: &mut ChaCha8Rng) -> SimEnv {
    let types = rng.random_range(1..=3);
    let find = |rng: &mut ChaCha8Rng| FindProbability {
        passage: rng.random_range(0.05..0.95),
        graph: rng.random_range(0.05..0.95),
    };
    SimEnv {
        question_types: (0..types)
            .map(|i| QuestionType::new(&format!("t{i}"), rng.random_range(0..=(PASSAGE_EVIDENCE | GRAPH_EVIDENCE)), 1.0))
            .collect(),
        passage_mode: find(rng),
        graph_mode: find(rng),
        hybrid_mode: find(rng),
        cap: rng.random_range(1..=3),
        ..SimEnv::default()
    }
}

pub fn random_policy(rng: &mut ChaCha8Rng, states: usize, scale: f64) -> TabularPolicy {
    let logits = (0..states * 4).map(|_| rng.random_range(-scale..scale)).collect();
    TabularPolicy::from_logits(logits)
}

/// One gradient-check instance: trajectories sampled from `old`, evaluated
/// at a perturbed `current` policy against a separate `reference`.
pub struct GradientCase {
    pub current: TabularPolicy,
    pub reference: TabularPolicy,
    pub groups: Vec<Vec<SimTrajectory>>,
    pub advantages: Vec<Vec<f64>>,
    pub grpo: GrpoConfig,
}

pub fn random_gradient_case(seed: u64) -> GradientCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env = random_env(&mut rng);
    let states = env.state_count();
    let old = random_policy(&mut rng, states, 1.0);
    let mut current = old.clone();
    for l in current.logits_mut() {
        *l += rng.random_range(-0.3..0.3);
    }
    let reference = random_policy(&mut rng, states, 1.0);
    let grpo = GrpoConfig {
        group_size: rng.random_range(2..=5),
        kl_coefficient: rng.random_range(0.0..0.5),
        ..GrpoConfig::default()
    };
    let n_groups = rng.random_range(1..=3);
    let groups: Vec<Vec<SimTrajectory>> = (0..n_groups)
        .map(|g| {
            let qt = rng.random_range(0..env.question_types.len());
            rollout_group(&env, &old, qt, grpo.group_size, seed.wrapping_mul(31).wrapping_add(g))
        })
        .collect();
    let stage = if rng.random::<bool>() { Stage::One } else { Stage::Two };
    let reward = RewardConfig {
        stage,
        ..RewardConfig::default()
    };
    let scored_input: Vec<Vec<(f64, u8)>> = groups
        .iter()
        .map(|g| g.iter().map(|t| (t.cost, t.outcome())).collect())
        .collect();
    let mut advantages: Vec<Vec<f64>> = score_batch(&scored_input, &reward, &grpo)
        .iter()
        .map(|g| g.iter().map(|s| s.advantage).collect())
        .collect();
    // Degenerate groups carry no signal; give them random advantages so
    // every instance exercises the policy-gradient path.
    for adv in &mut advantages {
        if adv.iter().all(|a| *a == 0.0) {
            for a in adv.iter_mut() {
                *a = rng.random_range(-1.5..1.5);
            }
        }
    }
    GradientCase {
        current,
        reference,
        groups,
        advantages,
        grpo,
    }
}

/// Smallest distance from any decision's ratio to a clip boundary.
pub fn kink_distance(case: &GradientCase) -> f64 {
    let eps = case.grpo.clip_epsilon;
    case.groups
        .iter()
        .flatten()
        .flat_map(|t| &t.decisions)
        .map(|d| {
            let r = (case.current.log_probability(d.state, d.action.index()) - d.old_log_prob).exp();
            (r - (1.0 - eps)).abs().min((r - (1.0 + eps)).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

/// `max |a - n| / max(max |a|, max |n|)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        linf(analytic, numeric) / scale
    }
}

/// Central differences of `f` over every logit of `policy`.
pub fn finite_difference<F>(policy: &TabularPolicy, h: f64, f: F) -> Vec<f64>
where
    F: Fn(&TabularPolicy) -> f64,
{
    let mut probe = policy.clone();
    (0..policy.logits().len())
        .map(|i| {
            let x = probe.logits()[i];
            probe.logits_mut()[i] = x + h;
            let up = f(&probe);
            probe.logits_mut()[i] = x - h;
            let down = f(&probe);
            probe.logits_mut()[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}
