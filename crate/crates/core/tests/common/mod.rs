//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use densepath::predictor::{prepare, CompletionInput, Model, ModelConfig, PredictionMode, PreparedScene, StepOutput};
use densepath::synth::{generate, GenConfig};
use densepath::tensor::ParamGrads;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use densepath::scene::{Lane, MapData, Point};
use densepath::tensor::{Tape, Tensor, Var};

pub fn d(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Greedy NMS written as "pick the argmax of what is left, then delete its
/// neighbours", with ties going to the lower index.
pub fn nms_oracle(coords: &[Point], scores: &[f64], k: usize, radius: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; coords.len()];
    let mut out = Vec::new();
    while out.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..coords.len() {
            if alive[i] && best.map_or(true, |b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        out.push(b);
        for i in 0..coords.len() {
            if d(coords[i], coords[b]) < radius {
                alive[i] = false;
            }
        }
    }
    out
}

/// NMS, then fill up to `k` with the best leftovers and stably re-sort by score.
pub fn select_oracle(coords: &[Point], scores: &[f64], k: usize, radius: f64) -> Vec<usize> {
    let mut picked = nms_oracle(coords, scores, k, radius);
    let mut rest: Vec<usize> = (0..coords.len()).filter(|i| !picked.contains(i)).collect();
    rest.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    for i in rest {
        if picked.len() >= k {
            break;
        }
        picked.push(i);
    }
    picked.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    picked
}

/// Every chain of per-step selections, scored by the product of its step
/// probabilities, fully sorted (stable) and truncated to `k`.
pub fn rollout_oracle(
    coords: &[Point],
    depth: usize,
    n: usize,
    k: usize,
    radius: f64,
    phi: &dyn Fn(usize, Option<usize>) -> Vec<f64>,
) -> Vec<(Vec<usize>, f64)> {
    fn walk(
        coords: &[Point],
        depth: usize,
        n: usize,
        radius: f64,
        phi: &dyn Fn(usize, Option<usize>) -> Vec<f64>,
        chain: &mut Vec<usize>,
        score: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if chain.len() == depth {
            out.push((chain.clone(), score));
            return;
        }
        let p = phi(chain.len(), chain.last().copied());
        for i in select_oracle(coords, &p, n, radius) {
            chain.push(i);
            walk(coords, depth, n, radius, phi, chain, score * p[i], out);
            chain.pop();
        }
    }
    let mut all = Vec::new();
    walk(coords, depth, n, radius, phi, &mut Vec::new(), 1.0, &mut all);
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    all.truncate(k);
    all
}

/// Index of the nearest candidate by exhaustive scan, ties to the lower index.
pub fn nearest_oracle(coords: &[Point], p: Point) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &c) in coords.iter().enumerate() {
        let dd = d(c, p);
        if best.map_or(true, |(_, bd)| dd < bd) {
            best = Some((i, dd));
        }
    }
    best.map(|(i, _)| i)
}

/// Distance from `p` to the segment `ab` via the closest-point parameter.
pub fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return d(p, a);
    }
    let t = (((p[0] - a[0]) * vx + (p[1] - a[1]) * vy) / len2).clamp(0.0, 1.0);
    d(p, [a[0] + t * vx, a[1] + t * vy])
}

/// `p` lies inside some lane corridor, or inside (or within half a width of)
/// some parking polygon of `map`.
pub fn corridor_oracle(map: &MapData, p: Point, tol: f64) -> bool {
    map.lanes.iter().any(|l| lane_contains(l, p, tol))
}

fn lane_contains(l: &Lane, p: Point, tol: f64) -> bool {
    if l.parking {
        // Winding number, independent of the crossing-count test in the library.
        let mut wn = 0i32;
        let n = l.points.len();
        for i in 0..n {
            let (a, b) = (l.points[i], l.points[(i + 1) % n]);
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
            if a[1] <= p[1] && b[1] > p[1] && cross > 0.0 {
                wn += 1;
            } else if a[1] > p[1] && b[1] <= p[1] && cross < 0.0 {
                wn -= 1;
            }
        }
        let ring = l.points.iter().chain(l.points.first()).copied().collect::<Vec<_>>();
        return wn != 0 || ring.windows(2).any(|w| seg_dist(p, w[0], w[1]) <= l.width / 2.0 + tol);
    }
    l.points.windows(2).any(|w| seg_dist(p, w[0], w[1]) <= l.width / 2.0 + tol)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig { hidden: 8, horizon_steps: 10, ..ModelConfig::default() }
}

/// Central-difference check of `f` against `grad` at `x`; entries where the
/// one-sided slopes disagree sit on a ReLU or max-pool switch and are skipped.
/// Returns (worst relative error, checked entries, skipped entries).
pub fn fd_compare(x: &[f64], grad: &[f64], h: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> (f64, usize, usize) {
    let f0 = f(x);
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    let mut xs = x.to_vec();
    for j in 0..x.len() {
        xs[j] = x[j] + h;
        let fp = f(&xs);
        xs[j] = x[j] - h;
        let fm = f(&xs);
        xs[j] = x[j];
        let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
        let central = (fp - fm) / (2.0 * h);
        if (right - left).abs() > 1e-3 * central.abs().max(1e-2) {
            // Smooth curvature makes the one-sided slopes differ by about h·f'', which
            // shrinks with the step. A kink does not.
            xs[j] = x[j] + h / 10.0;
            let fp2 = f(&xs);
            xs[j] = x[j] - h / 10.0;
            let fm2 = f(&xs);
            xs[j] = x[j];
            let gap = ((fp2 - f0) - (f0 - fm2)) / (h / 10.0);
            if gap.abs() > 0.3 * (right - left).abs() {
                skipped += 1;
                continue;
            }
        }
        let err = (grad[j] - central).abs() / grad[j].abs().max(central.abs()).max(1e-3);
        worst = worst.max(err);
        checked += 1;
    }
    (worst, checked, skipped)
}

/// Flattened values of every parameter, in store order.
pub fn flatten(model: &Model<f64>) -> Vec<f64> {
    model.params.iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

pub fn unflatten(model: &mut Model<f64>, flat: &[f64]) {
    let mut at = 0;
    for (_, t) in model.params.iter_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

pub fn total_loss(model: &Model<f64>, prep: &PreparedScene) -> f64 {
    let mut tape = Tape::new();
    let g = model.loss_graph(&mut tape, prep).unwrap().expect("usable scene");
    tape.value(g.total).item().unwrap()
}

pub fn prepared(cfg: &ModelConfig, s: &densepath::scene::Scenario) -> PreparedScene {
    prepare(s, cfg).unwrap()
}

/// A differentiable op applied to leaves, for the per-op gradient checks.
pub type OpGraph = fn(&mut Tape<f64>, &[Var]) -> densepath::Result<Var>;

/// Central-difference check of a small graph over its leaf inputs.
pub fn fd_graph(inputs: &[Tensor<f64>], build: OpGraph) -> (f64, usize, usize) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let grad: Vec<f64> = inputs
        .iter()
        .zip(&vars)
        .flat_map(|(t, v)| grads.get(*v).map_or(vec![0.0; t.numel()], |g| g.data().to_vec()))
        .collect();
    let x: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let mut eval = |flat: &[f64]| {
        let mut t = Tape::new();
        let mut at = 0;
        let mut vs = Vec::new();
        for s in &shapes {
            let n: usize = s.iter().product();
            vs.push(t.leaf(Tensor::new(s.clone(), flat[at..at + n].to_vec()).unwrap()).unwrap());
            at += n;
        }
        let l = build(&mut t, &vs).unwrap();
        t.value(l).item().unwrap()
    };
    fd_compare(&x, &grad, 1e-6, &mut eval)
}

fn weighted(t: &mut Tape<f64>, y: Var, w: Var) -> densepath::Result<Var> {
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn random_tensor(rng: &mut impl rand::Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// One small graph per differentiable tape operation. The last input of each
/// case weights the output so upstream gradients are not all ones.
pub fn op_cases() -> Vec<(&'static str, Vec<Tensor<f64>>, OpGraph)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    let mut r = |a, b| random_tensor(&mut rng, a, b);
    let probs = Tensor::new(vec![4, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    vec![
        ("matmul", vec![r(3, 4), r(4, 2), r(3, 2)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("matmul_nt", vec![r(3, 4), r(2, 4), r(3, 2)], |t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("add", vec![r(2, 3), r(2, 3), r(2, 3)], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("mul", vec![r(2, 3), r(2, 3), r(2, 3)], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("add_row", vec![r(3, 2), r(1, 2), r(3, 2)], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("relu", vec![r(4, 3), r(4, 3)], |t, v| {
            let y = t.relu(v[0])?;
            weighted(t, y, v[1])
        }),
        ("layer_norm", vec![r(3, 5), r(3, 5)], |t, v| {
            let y = t.layer_norm(v[0])?;
            weighted(t, y, v[1])
        }),
        ("scale", vec![r(2, 2), r(2, 2)], |t, v| {
            let y = t.scale(v[0], -2.5)?;
            weighted(t, y, v[1])
        }),
        ("softmax_rows", vec![r(3, 4), r(3, 4)], |t, v| {
            let y = t.softmax(v[0], 1)?;
            weighted(t, y, v[1])
        }),
        ("softmax_cols", vec![r(5, 2), r(5, 2)], |t, v| {
            let y = t.softmax(v[0], 0)?;
            weighted(t, y, v[1])
        }),
        ("transpose", vec![r(2, 3), r(3, 2)], |t, v| {
            let y = t.transpose(v[0])?;
            weighted(t, y, v[1])
        }),
        ("concat_cols", vec![r(2, 1), r(2, 3), r(2, 4)], |t, v| {
            let y = t.concat_cols(&[v[0], v[1]])?;
            weighted(t, y, v[2])
        }),
        ("concat_rows", vec![r(1, 3), r(2, 3), r(3, 3)], |t, v| {
            let y = t.concat_rows(&[v[0], v[1]])?;
            weighted(t, y, v[2])
        }),
        ("max_rows", vec![r(4, 3), r(1, 3)], |t, v| {
            let y = t.max_rows(v[0])?;
            weighted(t, y, v[1])
        }),
        ("repeat_rows", vec![r(1, 3), r(4, 3)], |t, v| {
            let y = t.repeat_rows(v[0], 4)?;
            weighted(t, y, v[1])
        }),
        ("gather_rows", vec![r(3, 2), r(4, 2)], |t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2, 1])?;
            weighted(t, y, v[1])
        }),
        ("reshape", vec![r(2, 3), r(3, 2)], |t, v| {
            let y = t.reshape(v[0], vec![3, 2])?;
            weighted(t, y, v[1])
        }),
        ("sum", vec![r(2, 3)], |t, v| {
            let s = t.sum(v[0])?;
            t.mul(s, s)
        }),
        ("bce_sum", vec![probs.clone()], |t, v| t.bce_sum(v[0], &[0.0, 0.0, 1.0, 0.0])),
        ("nll", vec![probs], |t, v| t.nll(v[0], 1)),
        ("smooth_l1_sum", vec![r(2, 3).map(|x| x * 3.0)], |t, v| {
            t.smooth_l1_sum(v[0], &[0.5, -0.5, 2.0, 0.0, 1.2, -3.0])
        }),
        ("attention", vec![r(3, 4), r(5, 4), r(5, 2), r(3, 2)], |t, v| {
            let y = densepath::tensor::attention(t, v[0], v[1], v[2])?;
            weighted(t, y, v[3])
        }),
    ]
}

/// Candidates on a coarse lattice (so exact ties and exact-radius distances
/// occur) with scores drawn from a few levels (so score ties occur).
pub fn lattice_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Point>, Vec<f64>) {
    let coords = (0..n).map(|_| [rng.gen_range(0..12) as f64 * 0.5, rng.gen_range(0..12) as f64 * 0.5]).collect();
    let scores = (0..n).map(|_| rng.gen_range(0..20) as f64 / 20.0).collect();
    (coords, scores)
}

/// Normalized integer-level scores, keyed on the step and the previous choice.
pub fn step_scores(seed: u64, n: usize, d: usize, prev: Option<usize>) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((d as u64) << 32) ^ prev.map_or(u64::MAX, |p| p as u64));
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1..50) as f64).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// One random rollout instance compared against exhaustive enumeration.
pub fn rollout_matches_oracle(case: u64, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n_cand = rng.gen_range(1..=25);
    let coords: Vec<Point> = (0..n_cand).map(|_| [rng.gen_range(0..8) as f64, rng.gen_range(0..8) as f64]).collect();
    let n = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=n * n * n);
    let radius = [1.0, 1.5, 2.0][rng.gen_range(0..3)];
    let index_of = |p: Point| coords.iter().position(|&c| c == p);
    let got = densepath::predictor::autoregressive_rollout(&coords, 3, n, k, radius, |d, prev: Option<Point>| {
        // Duplicate coordinates make the previous index ambiguous; the
        // rollout passes coordinates, so the oracle keys on the first match.
        let prev = prev.map(|p| index_of(p).unwrap());
        Ok(StepOutput { phi: step_scores(case, n_cand, d, prev), features: Tensor::zeros(&[n_cand, 1]) })
    })
    .map_err(|e| e.to_string())?;
    let want = rollout_oracle(&coords, 3, n, k, radius, &|d, prev| {
        step_scores(case, n_cand, d, prev.map(|i| index_of(coords[i]).unwrap()))
    });
    if got.len() != want.len() {
        return Err(format!("case {case}: {} sets, expected {}", got.len(), want.len()));
    }
    for (g, (chain, score)) in got.iter().zip(&want) {
        if &g.goals != chain || g.score != *score || g.probs.iter().product::<f64>() != g.score {
            return Err(format!("case {case}: {:?} {} vs {chain:?} {score}", g.goals, g.score));
        }
    }
    Ok(())
}

pub fn synth_scene(cfg: &ModelConfig, seed: u64, speed: [f64; 2]) -> PreparedScene {
    let horizon_s = cfg.horizon() as f64 / 10.0;
    let gen = GenConfig { n_scenarios: 1, seed, horizon_s, speed, ..GenConfig::default() };
    prepared(cfg, &generate(&gen).unwrap().remove(0))
}

/// Central differences of the total loss against every parameter.
pub fn model_fd(model: &Model<f64>, prep: &PreparedScene) -> (f64, usize, usize) {
    let (_, grads) = model.loss_and_grads(prep).unwrap().unwrap();
    let x = flatten(model);
    let g: Vec<f64> = model.params.iter().flat_map(|(n, _)| grads.get(n).unwrap().data().to_vec()).collect();
    let mut probe = model.clone();
    fd_compare(&x, &g, 1e-5, &mut |flat| {
        unflatten(&mut probe, flat);
        total_loss(&probe, prep)
    })
}

/// End-to-end models for the gradient check: short, short with every variant
/// switch flipped, and long.
pub fn model_fd_cases() -> Vec<(&'static str, Model<f64>, PreparedScene)> {
    let speed = GenConfig::default().speed;
    let short = tiny_config();
    let variants =
        ModelConfig { lanes_only: true, plain_ce: true, completion_input: CompletionInput::Coordinate, ..tiny_config() };
    // An untrained 8 s completion loss is in the thousands, which drowns central
    // differences in rounding noise. Slow traffic and a damped completion head keep
    // it small without changing the graph.
    let long = ModelConfig { mode: PredictionMode::Long, ..tiny_config() };
    let mut long_model = Model::new(long.clone(), 3).unwrap();
    for (_, t) in long_model.params.iter_mut().filter(|(n, _)| n.contains(".completion.")) {
        t.data_mut().iter_mut().for_each(|w| *w *= 0.05);
    }
    vec![
        ("short", Model::new(short.clone(), 1).unwrap(), synth_scene(&short, 1, speed)),
        ("short variants", Model::new(variants.clone(), 2).unwrap(), synth_scene(&variants, 2, speed)),
        ("long", long_model, synth_scene(&long, 3, [0.3, 0.5])),
    ]
}

/// Gradients of the whole loss and of each part (goal losses per branch, then completion).
pub fn backward_parts(model: &Model<f64>, prep: &PreparedScene) -> (ParamGrads<f64>, Vec<ParamGrads<f64>>) {
    let mut tape = Tape::new();
    let g = model.loss_graph(&mut tape, prep).unwrap().unwrap();
    let total = g.vars.collect(&tape, tape.backward(g.total).unwrap());
    let parts = g
        .goal
        .iter()
        .chain(std::iter::once(&g.completion))
        .map(|&v| g.vars.collect(&tape, tape.backward(v).unwrap()))
        .collect();
    (total, parts)
}

/// Goal-side parameters that receive a nonzero gradient from the completion loss
/// alone. Scorers must never appear; with coordinate completion input, neither
/// may anything else on the goal path.
pub fn completion_leaks(mode: PredictionMode, input: CompletionInput, seed: u64) -> Vec<String> {
    let cfg = ModelConfig { mode, completion_input: input, ..tiny_config() };
    let prep = synth_scene(&cfg, seed, GenConfig::default().speed);
    let model = Model::<f64>::new(cfg, seed).unwrap();
    let (_, parts) = backward_parts(&model, &prep);
    let completion = parts.last().unwrap();
    assert!(completion.iter().any(|(n, g)| n.contains(".completion.") && g.data().iter().any(|&x| x != 0.0)));
    completion
        .iter()
        .filter(|(name, g)| {
            let scorer = name.contains(".scorer.");
            let goal_path = name.contains(".goal_mlp.") || name.contains(".goal_attn.") || name.contains(".prev_goal.");
            (scorer || (input == CompletionInput::Coordinate && goal_path)) && g.data().iter().any(|&x| x != 0.0)
        })
        .map(|(name, _)| name.clone())
        .collect()
}
