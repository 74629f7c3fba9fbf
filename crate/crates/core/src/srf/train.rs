//! Forest training: node variance, randomized split search and
//! worst-first tree growth.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::{MotionPatch, TrainingCorpus, TrainingSample, DESCRIPTOR_LEN};
use crate::seed::derive_seed;

use super::{
    ForestConfig, ForestError, SplitRecord, SplitType, StructuredForest, Tree, TreeNode,
    TreeProvenance,
};

/// Reserved rng stream for a tree's frame-pair draw; node streams use the
/// node id, which counts up from zero and never reaches this value.
const PAIR_DRAW_STREAM: u64 = u64::MAX;

/// Motion variance of a sample set: the total squared deviation from the
/// per-pixel mean patch, divided by patch pixels times (n - 1). Empty and
/// singleton sets have zero variance.
///
/// Panics if an index is out of range.
pub fn node_variance(samples: &[TrainingSample], indices: &[u32]) -> f64 {
    let n = indices.len();
    if n <= 1 {
        return 0.0;
    }
    let first = &samples[indices[0] as usize].motion;
    let pd = first.pixels() * first.dims();
    let mut mean = vec![0.0_f64; pd];
    for &i in indices {
        for (m, v) in mean.iter_mut().zip(samples[i as usize].motion.values()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut ss = 0.0;
    for &i in indices {
        for (m, v) in mean.iter().zip(samples[i as usize].motion.values()) {
            let d = v - m;
            ss += d * d;
        }
    }
    ss / (first.pixels() as f64 * (n - 1) as f64)
}

/// Winning node test and its achieved objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestSplit {
    pub record: SplitRecord,
    /// (V_left * n_left + V_right * n_right) / n for the winning threshold.
    pub objective: f64,
}

/// Randomized split search minimizing the size-weighted child variance.
///
/// Draw protocol, fixed so a replay with the same rng reproduces the search
/// exactly. Per candidate, in order:
/// 1. split type code: `gen_range(0..4u8)` (0 Single, 1 Sum, 2 Diff, 3 AbsDiff)
/// 2. index a: `gen_range(0..DESCRIPTOR_LEN)`
/// 3. index b: `gen_range(0..DESCRIPTOR_LEN)`, drawn even for Single
/// 4. iff the candidate's response range is non-degenerate (min < max):
///    `thresholds_per_candidate` thresholds via `gen_range(min..max)`
///
/// Thresholds leaving either side below `min_child` are discarded. The first
/// strictly smaller objective in generation order wins. Returns None without
/// consuming the rng when fewer than `2 * min_child` samples are given, and
/// None after the full search when no candidate produced a valid threshold.
pub fn best_split(
    samples: &[TrainingSample],
    indices: &[u32],
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> Option<BestSplit> {
    let n = indices.len();
    if n < 2 * cfg.min_child {
        return None;
    }
    let first = &samples[indices[0] as usize].motion;
    let pixels = first.pixels() as f64;
    let pd = first.pixels() * first.dims();

    // Node-level sufficient statistics.
    let mut m_tot = vec![0.0_f64; pd];
    let mut q = Vec::with_capacity(n);
    for &i in indices {
        let x = samples[i as usize].motion.values();
        let mut qi = 0.0;
        for (m, v) in m_tot.iter_mut().zip(x) {
            *m += v;
            qi += v * v;
        }
        q.push(qi);
    }
    let q_tot: f64 = q.iter().sum();
    let m2_tot: f64 = m_tot.iter().map(|v| v * v).sum();
    let tdot: Vec<f64> = indices
        .iter()
        .map(|&i| {
            m_tot
                .iter()
                .zip(samples[i as usize].motion.values())
                .map(|(m, v)| m * v)
                .sum()
        })
        .collect();

    // Size-weighted variance of one side from its sufficient statistics.
    let side = |q_side: f64, m2_side: f64, count: usize| -> f64 {
        if count <= 1 {
            return 0.0;
        }
        let ss = (q_side - m2_side / count as f64).max(0.0);
        ss * count as f64 / (pixels * (count as f64 - 1.0))
    };

    let mut best: Option<BestSplit> = None;
    let mut resp = vec![0.0_f64; n];
    let mut m_run = vec![0.0_f64; pd];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut q_pref = vec![0.0_f64; n + 1];
    let mut t_pref = vec![0.0_f64; n + 1];
    let mut s_pref = vec![0.0_f64; n + 1];
    let mut sorted_resp = vec![0.0_f64; n];

    for _ in 0..cfg.split_candidates {
        let split_type = SplitType::from_code(rng.gen_range(0..4u8)).expect("code in range");
        let index_a = rng.gen_range(0..DESCRIPTOR_LEN) as u16;
        let index_b = rng.gen_range(0..DESCRIPTOR_LEN) as u16;
        let probe = SplitRecord {
            split_type,
            index_a,
            index_b,
            threshold: 0.0,
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (k, &i) in indices.iter().enumerate() {
            let r = probe.response(&samples[i as usize].descriptor);
            resp[k] = r;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if !(lo < hi) {
            continue;
        }

        // One descending sweep gives prefix statistics for every possible
        // left side (left = response >= threshold).
        order.clear();
        order.extend(0..n);
        order.sort_unstable_by(|&a, &b| resp[b].partial_cmp(&resp[a]).expect("finite"));
        m_run.iter_mut().for_each(|v| *v = 0.0);
        for (k, &o) in order.iter().enumerate() {
            sorted_resp[k] = resp[o];
            let x = samples[indices[o] as usize].motion.values();
            let mut cross = 0.0;
            for (m, v) in m_run.iter_mut().zip(x) {
                cross += *m * v;
                *m += v;
            }
            q_pref[k + 1] = q_pref[k] + q[o];
            t_pref[k + 1] = t_pref[k] + tdot[o];
            s_pref[k + 1] = s_pref[k] + 2.0 * cross + q[o];
        }

        for _ in 0..cfg.thresholds_per_candidate {
            let t = rng.gen_range(lo..hi);
            let n_l = sorted_resp.partition_point(|&r| r >= t);
            let n_r = n - n_l;
            if n_l < cfg.min_child || n_r < cfg.min_child {
                continue;
            }
            let s_l = s_pref[n_l];
            let m2_r = m2_tot - 2.0 * t_pref[n_l] + s_l;
            let obj =
                (side(q_pref[n_l], s_l, n_l) + side(q_tot - q_pref[n_l], m2_r, n_r)) / n as f64;
            if best.map_or(true, |b| obj < b.objective) {
                best = Some(BestSplit {
                    record: SplitRecord {
                        threshold: t,
                        ..probe
                    },
                    objective: obj,
                });
            }
        }
    }
    best
}

/// Why a node became a leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafReason {
    LowVariance,
    NoValidSplit,
    LeafBudget,
}

/// One frontier pop during growth, in processing order.
#[derive(Clone, Debug, PartialEq)]
pub enum GrowthEvent {
    Split {
        node_id: u32,
        variance: f64,
        sample_count: usize,
        objective: f64,
        record: SplitRecord,
        left_id: u32,
        right_id: u32,
        left_variance: f64,
        right_variance: f64,
    },
    Leaf {
        node_id: u32,
        variance: f64,
        sample_count: usize,
        reason: LeafReason,
    },
}

impl GrowthEvent {
    pub fn node_id(&self) -> u32 {
        match self {
            GrowthEvent::Split { node_id, .. } | GrowthEvent::Leaf { node_id, .. } => *node_id,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            GrowthEvent::Split { variance, .. } | GrowthEvent::Leaf { variance, .. } => *variance,
        }
    }
}

/// Frontier pops in processing order, for audit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GrowthTrace {
    pub events: Vec<GrowthEvent>,
}

/// Replays a growth trace and verifies the worst-first discipline: every pop
/// takes the highest-variance frontier node, breaking ties by lower node id.
pub fn check_worst_first(trace: &GrowthTrace) -> Result<(), String> {
    let mut frontier: BTreeMap<u32, f64> = BTreeMap::new();
    for (step, ev) in trace.events.iter().enumerate() {
        if step == 0 {
            if ev.node_id() != 0 {
                return Err(format!("first pop is node {}, expected root", ev.node_id()));
            }
            frontier.insert(0, ev.variance());
        }
        let id = ev.node_id();
        let Some(&var) = frontier.get(&id) else {
            return Err(format!("step {step}: node {id} popped but not on frontier"));
        };
        if var.to_bits() != ev.variance().to_bits() {
            return Err(format!(
                "step {step}: node {id} variance {} does not match frontier {var}",
                ev.variance()
            ));
        }
        for (&oid, &ov) in &frontier {
            if oid != id && (ov > var || (ov == var && oid < id)) {
                return Err(format!(
                    "step {step}: node {oid} (variance {ov}) should pop before {id} ({var})"
                ));
            }
        }
        frontier.remove(&id);
        if let GrowthEvent::Split {
            left_id,
            right_id,
            left_variance,
            right_variance,
            ..
        } = ev
        {
            frontier.insert(*left_id, *left_variance);
            frontier.insert(*right_id, *right_variance);
        }
    }
    if !frontier.is_empty() {
        return Err("growth ended with undrained frontier".into());
    }
    Ok(())
}

struct FrontierEntry {
    variance: f64,
    node_id: u32,
    samples: Vec<u32>,
}

impl PartialEq for FrontierEntry {
    fn eq(&self, other: &Self) -> bool {
        self.node_id == other.node_id
    }
}

impl Eq for FrontierEntry {}

impl Ord for FrontierEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap: higher variance first, then lower node id.
        self.variance
            .total_cmp(&other.variance)
            .then_with(|| other.node_id.cmp(&self.node_id))
    }
}

impl PartialOrd for FrontierEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A grown tree together with its audit trace.
#[derive(Clone, Debug)]
pub struct GrownTree {
    pub tree: Tree,
    pub trace: GrowthTrace,
}

fn leaf_mean(samples: &[TrainingSample], indices: &[u32]) -> MotionPatch {
    let first = &samples[indices[0] as usize].motion;
    let (pixels, dims) = (first.pixels(), first.dims());
    let mut mean = vec![0.0_f64; pixels * dims];
    for &i in indices {
        for (m, v) in mean.iter_mut().zip(samples[i as usize].motion.values()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= indices.len() as f64;
    }
    let mut patch = MotionPatch::new(pixels, dims, mean).expect("finite mean");
    patch.quantize_f32();
    patch
}

/// Grows one tree over the given corpus samples, worst-first: the frontier
/// node with the highest variance is processed next (ties to the lower node
/// id). A node becomes a leaf when its variance falls below the threshold,
/// when the terminal-node budget is exhausted, or when no valid split is
/// found. Node ids are assigned in creation order, root first; the rng for
/// node k is seeded from `derive_seed(tree_seed, k)`.
pub fn grow_tree(
    corpus: &TrainingCorpus,
    sample_ids: &[u32],
    cfg: &ForestConfig,
    tree_seed: u64,
) -> Result<GrownTree, ForestError> {
    cfg.validate()?;
    if sample_ids.is_empty() {
        return Err(ForestError::NoSamples);
    }
    let samples = &corpus.samples;
    let expected = (corpus.patch_size * corpus.patch_size, corpus.label_dims);
    for &i in sample_ids {
        let Some(s) = samples.get(i as usize) else {
            return Err(ForestError::BadSampleIndex);
        };
        if (s.motion.pixels(), s.motion.dims()) != expected {
            return Err(ForestError::MixedShapes);
        }
    }

    let mut slots: Vec<Option<TreeNode>> = vec![None];
    let mut heap = BinaryHeap::new();
    heap.push(FrontierEntry {
        variance: node_variance(samples, sample_ids),
        node_id: 0,
        samples: sample_ids.to_vec(),
    });
    let mut terminal = 1usize;
    let mut events = Vec::new();

    while let Some(entry) = heap.pop() {
        let make_leaf = |reason: LeafReason, events: &mut Vec<GrowthEvent>| {
            events.push(GrowthEvent::Leaf {
                node_id: entry.node_id,
                variance: entry.variance,
                sample_count: entry.samples.len(),
                reason,
            });
            TreeNode::Leaf {
                mean: leaf_mean(samples, &entry.samples),
            }
        };
        let node = if entry.variance < cfg.var_threshold {
            make_leaf(LeafReason::LowVariance, &mut events)
        } else if terminal >= cfg.max_leaves {
            make_leaf(LeafReason::LeafBudget, &mut events)
        } else {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(tree_seed, u64::from(entry.node_id)));
            match best_split(samples, &entry.samples, cfg, &mut rng) {
                None => make_leaf(LeafReason::NoValidSplit, &mut events),
                Some(found) => {
                    let (left, right): (Vec<u32>, Vec<u32>) = entry
                        .samples
                        .iter()
                        .partition(|&&i| found.record.respond(&samples[i as usize].descriptor));
                    let left_id = slots.len() as u32;
                    slots.push(None);
                    let right_id = slots.len() as u32;
                    slots.push(None);
                    let left_variance = node_variance(samples, &left);
                    let right_variance = node_variance(samples, &right);
                    events.push(GrowthEvent::Split {
                        node_id: entry.node_id,
                        variance: entry.variance,
                        sample_count: entry.samples.len(),
                        objective: found.objective,
                        record: found.record,
                        left_id,
                        right_id,
                        left_variance,
                        right_variance,
                    });
                    heap.push(FrontierEntry {
                        variance: left_variance,
                        node_id: left_id,
                        samples: left,
                    });
                    heap.push(FrontierEntry {
                        variance: right_variance,
                        node_id: right_id,
                        samples: right,
                    });
                    terminal += 1;
                    TreeNode::Split {
                        record: found.record,
                        left: left_id,
                        right: right_id,
                    }
                }
            }
        };
        slots[entry.node_id as usize] = Some(node);
    }

    let nodes = slots
        .into_iter()
        .map(|s| s.expect("every created node is finalized"))
        .collect();
    Ok(GrownTree {
        tree: Tree {
            nodes,
            provenance: TreeProvenance {
                seed: tree_seed,
                sample_count: sample_ids.len() as u32,
            },
        },
        trace: events_into_trace(events),
    })
}

fn events_into_trace(events: Vec<GrowthEvent>) -> GrowthTrace {
    GrowthTrace { events }
}

fn tree_sample_ids(corpus: &TrainingCorpus, cfg: &ForestConfig, tree_seed: u64) -> Vec<u32> {
    let total_pairs = corpus.pairs.len();
    let pair_ids: Vec<usize> = if total_pairs <= cfg.pairs_per_tree {
        (0..total_pairs).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tree_seed, PAIR_DRAW_STREAM));
        let mut ids =
            rand::seq::index::sample(&mut rng, total_pairs, cfg.pairs_per_tree).into_vec();
        ids.sort_unstable();
        ids
    };
    corpus.indices_for_pairs(&pair_ids)
}

/// Trains the full ensemble. Tree k is grown from frame pairs drawn without
/// replacement using seed `derive_seed(cfg.seed, k)`; when the corpus has no
/// more pairs than `pairs_per_tree`, every tree sees all of them.
pub fn train_forest(
    corpus: &TrainingCorpus,
    cfg: &ForestConfig,
) -> Result<StructuredForest, ForestError> {
    train_forest_with_traces(corpus, cfg).map(|(forest, _)| forest)
}

/// As `train_forest`, also returning each tree's growth trace.
pub fn train_forest_with_traces(
    corpus: &TrainingCorpus,
    cfg: &ForestConfig,
) -> Result<(StructuredForest, Vec<GrowthTrace>), ForestError> {
    cfg.validate()?;
    if corpus.samples.is_empty() {
        return Err(ForestError::NoSamples);
    }
    let mut trees = Vec::with_capacity(cfg.trees);
    let mut traces = Vec::with_capacity(cfg.trees);
    for k in 0..cfg.trees {
        let tree_seed = derive_seed(cfg.seed, k as u64);
        let ids = tree_sample_ids(corpus, cfg, tree_seed);
        let grown = grow_tree(corpus, &ids, cfg, tree_seed)?;
        trees.push(grown.tree);
        traces.push(grown.trace);
    }
    Ok((
        StructuredForest {
            config: *cfg,
            patch_size: corpus.patch_size,
            label_dims: corpus.label_dims,
            trees,
        },
        traces,
    ))
}
