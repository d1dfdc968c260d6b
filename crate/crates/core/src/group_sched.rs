//! Group scheduler: decides which API groups get a driver generated next.
//!
//! Candidates are scored on four objectives (similarity to productive past
//! groups, predicted coverage, shortness, entropy gain over the driver pool)
//! and picked front by front from a nondominated sort.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::GroupEnumerator;
use crate::model::ApiGroup;

/// Default number of pending candidates ranked per round.
pub const DEFAULT_WINDOW: usize = 2048;
/// Default group batch size.
pub const DEFAULT_BATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupStatus {
    Candidate,
    Generating,
    HasDriver,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group: ApiGroup,
    pub status: GroupStatus,
    /// Best normalized coverage among this group's drivers.
    pub observed_coverage: f64,
    pub attempts: u32,
    pub executed_slices: u64,
}

impl GroupRecord {
    pub fn candidate(group: ApiGroup) -> Self {
        GroupRecord { group, status: GroupStatus::Candidate, observed_coverage: 0.0, attempts: 0, executed_slices: 0 }
    }

    pub fn executed(&self) -> bool {
        self.executed_slices > 0
    }
}

/// Objectives oriented so that larger is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub similarity: f64,
    pub predicted_coverage: f64,
    pub neg_length: i64,
    pub entropy_gain: f64,
}

impl ObjectiveVector {
    pub fn components(&self) -> [f64; 4] {
        [self.similarity, self.predicted_coverage, self.neg_length as f64, self.entropy_gain]
    }
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `sum_s jaccard(s, candidate) * C_s` over the given history.
pub fn similarity_score<'a, I>(candidate: &ApiGroup, history: I) -> f64
where
    I: IntoIterator<Item = &'a GroupRecord>,
{
    history
        .into_iter()
        .map(|s| jaccard(&s.group.members, &candidate.members) * s.observed_coverage)
        .sum()
}

/// Shannon entropy (bits) of the normalized API frequency distribution.
pub fn pool_entropy(frequencies: &BTreeMap<String, u64>) -> f64 {
    let total: u64 = frequencies.values().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -frequencies
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Entropy change from adding one occurrence of each candidate member.
pub fn entropy_gain(candidate: &ApiGroup, frequencies: &BTreeMap<String, u64>) -> f64 {
    let mut after = frequencies.clone();
    for m in candidate.iter() {
        *after.entry(m.to_string()).or_insert(0) += 1;
    }
    pool_entropy(&after) - pool_entropy(frequencies)
}

/// Precomputed totals for O(|group|) entropy-gain evaluation, using
/// `H = log2(T) - (1/T) * sum c*log2(c)`.
struct EntropyStats<'a> {
    frequencies: &'a BTreeMap<String, u64>,
    total: f64,
    sum_c_log_c: f64,
    base: f64,
}

fn c_log_c(c: f64) -> f64 {
    if c > 0.0 {
        c * c.log2()
    } else {
        0.0
    }
}

impl<'a> EntropyStats<'a> {
    fn new(frequencies: &'a BTreeMap<String, u64>) -> Self {
        let total = frequencies.values().sum::<u64>() as f64;
        let sum_c_log_c = frequencies.values().map(|&c| c_log_c(c as f64)).sum();
        let base = pool_entropy(frequencies);
        EntropyStats { frequencies, total, sum_c_log_c, base }
    }

    fn gain(&self, candidate: &ApiGroup) -> f64 {
        let mut sum = self.sum_c_log_c;
        for m in candidate.iter() {
            let c = self.frequencies.get(m).copied().unwrap_or(0) as f64;
            sum += c_log_c(c + 1.0) - c_log_c(c);
        }
        let total = self.total + candidate.size() as f64;
        if total == 0.0 {
            return 0.0;
        }
        (total.log2() - sum / total) - self.base
    }
}

/// Mean over members of the mean observed coverage of executed groups that
/// contain the member; members never executed count as 0.
pub fn predicted_coverage<'a, I>(candidate: &ApiGroup, history: I) -> f64
where
    I: IntoIterator<Item = &'a GroupRecord>,
{
    let per_api = per_api_coverage(history);
    predicted_from(candidate, &per_api)
}

fn per_api_coverage<'a, I>(history: I) -> HashMap<&'a str, (f64, u64)>
where
    I: IntoIterator<Item = &'a GroupRecord>,
{
    let mut per_api: HashMap<&str, (f64, u64)> = HashMap::new();
    for rec in history {
        for m in rec.group.iter() {
            let e = per_api.entry(m).or_insert((0.0, 0));
            e.0 += rec.observed_coverage;
            e.1 += 1;
        }
    }
    per_api
}

fn predicted_from(candidate: &ApiGroup, per_api: &HashMap<&str, (f64, u64)>) -> f64 {
    if candidate.size() == 0 {
        return 0.0;
    }
    let sum: f64 = candidate
        .iter()
        .map(|m| match per_api.get(m) {
            Some(&(s, n)) if n > 0 => s / n as f64,
            _ => 0.0,
        })
        .sum();
    sum / candidate.size() as f64
}

/// API membership as a bitset; ids are only meaningful within one Interner.
#[derive(Debug, Clone)]
struct Bits {
    words: Vec<u64>,
    len: u32,
}

impl Bits {
    fn jaccard(&self, other: &Bits) -> f64 {
        let inter: u32 = self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones()).sum();
        let union = self.len + other.len - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Default)]
struct Interner<'a> {
    ids: HashMap<&'a str, usize>,
}

impl<'a> Interner<'a> {
    fn bits(&mut self, group: &'a ApiGroup) -> Bits {
        let mut words = Vec::new();
        for m in group.iter() {
            let next = self.ids.len();
            let id = *self.ids.entry(m).or_insert(next);
            if words.len() <= id / 64 {
                words.resize(id / 64 + 1, 0);
            }
            words[id / 64] |= 1u64 << (id % 64);
        }
        Bits { words, len: group.size() as u32 }
    }
}

/// `a` is at least as good everywhere and strictly better somewhere.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    let (a, b) = (a.components(), b.components());
    a.iter().zip(&b).all(|(x, y)| x >= y) && a.iter().zip(&b).any(|(x, y)| x > y)
}

/// Nondominated sorting rank of each candidate; 0 is the Pareto front.
pub fn pareto_rank(candidates: &[ObjectiveVector]) -> Vec<usize> {
    let n = candidates.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&candidates[i], &candidates[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates(&candidates[j], &candidates[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut rank = vec![0usize; n];
    let mut front: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    let mut level = 0;
    while !front.is_empty() {
        let mut next = Vec::new();
        for &p in &front {
            rank[p] = level;
            for &q in &dominates_list[p] {
                dominated_by_count[q] -= 1;
                if dominated_by_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        front = next;
        level += 1;
    }
    rank
}

/// Indices of the nondominated members of `alive`, in input order.
fn first_front(vectors: &[ObjectiveVector], alive: &[usize]) -> Vec<usize> {
    let mut front: Vec<usize> = Vec::new();
    for &i in alive {
        if front.iter().any(|&f| dominates(&vectors[f], &vectors[i])) {
            continue;
        }
        front.retain(|&f| !dominates(&vectors[i], &vectors[f]));
        front.push(i);
    }
    front.sort_unstable();
    front
}

/// Fills a batch of up to `k` indices front by front. Within a front,
/// higher entropy gain goes first, then lexicographic member order.
pub fn select_by_fronts(vectors: &[ObjectiveVector], groups: &[&ApiGroup], k: usize) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..vectors.len()).collect();
    let mut out = Vec::with_capacity(k);
    while out.len() < k && !alive.is_empty() {
        let mut front = first_front(vectors, &alive);
        front.sort_by(|&a, &b| {
            vectors[b].entropy_gain.total_cmp(&vectors[a].entropy_gain).then_with(|| groups[a].cmp(groups[b]))
        });
        out.extend(front.iter().take(k - out.len()));
        let taken: BTreeSet<usize> = front.into_iter().collect();
        alive.retain(|i| !taken.contains(i));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Nondominated sorting over the four objectives.
    #[default]
    Pareto,
    /// Uniform random choice among pending candidates (ablation).
    Random,
}

/// Serializable part of the group scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSchedulerState {
    pub records: Vec<GroupRecord>,
    /// Groups drawn from the enumerator so far.
    pub pulled: u64,
    pub stream_exhausted: bool,
    pub window: usize,
    pub policy: SelectionPolicy,
    /// API occurrence counts over groups whose driver sits in the pool.
    pub pool_frequencies: BTreeMap<String, u64>,
}

pub struct GroupScheduler {
    state: GroupSchedulerState,
    lookup: HashMap<ApiGroup, usize>,
    stream: GroupEnumerator,
}

impl GroupScheduler {
    pub fn new(stream: GroupEnumerator, window: usize, policy: SelectionPolicy) -> Self {
        let state = GroupSchedulerState {
            records: Vec::new(),
            pulled: 0,
            stream_exhausted: false,
            window: window.max(1),
            policy,
            pool_frequencies: BTreeMap::new(),
        };
        GroupScheduler { state, lookup: HashMap::new(), stream }
    }

    /// Rebuilds a scheduler from saved state and a fresh enumerator created
    /// with the same options; the enumerator is fast-forwarded.
    pub fn restore(state: GroupSchedulerState, mut stream: GroupEnumerator) -> Self {
        for _ in 0..state.pulled {
            if stream.next().is_none() {
                break;
            }
        }
        let lookup = state.records.iter().enumerate().map(|(i, r)| (r.group.clone(), i)).collect();
        GroupScheduler { state, lookup, stream }
    }

    pub fn state(&self) -> &GroupSchedulerState {
        &self.state
    }

    pub fn records(&self) -> &[GroupRecord] {
        &self.state.records
    }

    pub fn record(&self, group: &ApiGroup) -> Option<&GroupRecord> {
        self.lookup.get(group).map(|&i| &self.state.records[i])
    }

    fn record_mut(&mut self, group: &ApiGroup) -> Option<&mut GroupRecord> {
        let i = *self.lookup.get(group)?;
        Some(&mut self.state.records[i])
    }

    /// Adds a group that did not come from the enumerator (e.g. a pre-seeded
    /// driver's group). Existing records are returned unchanged.
    pub fn ensure_record(&mut self, group: &ApiGroup) -> &mut GroupRecord {
        if !self.lookup.contains_key(group) {
            self.lookup.insert(group.clone(), self.state.records.len());
            self.state.records.push(GroupRecord::candidate(group.clone()));
        }
        self.record_mut(group).expect("just inserted")
    }

    fn pending(&self) -> Vec<usize> {
        self.state
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == GroupStatus::Candidate)
            .map(|(i, _)| i)
            .collect()
    }

    fn refill(&mut self) {
        let mut pending = self.pending().len();
        while pending < self.state.window && !self.state.stream_exhausted {
            match self.stream.next() {
                Some(g) => {
                    self.state.pulled += 1;
                    if !self.lookup.contains_key(&g) {
                        self.lookup.insert(g.clone(), self.state.records.len());
                        self.state.records.push(GroupRecord::candidate(g));
                        pending += 1;
                    }
                }
                None => self.state.stream_exhausted = true,
            }
        }
    }

    pub fn history(&self) -> impl Iterator<Item = &GroupRecord> {
        self.state.records.iter().filter(|r| r.executed())
    }

    /// Objective vectors for the given record indices.
    pub fn objectives(&self, candidates: &[usize]) -> Vec<ObjectiveVector> {
        let history: Vec<&GroupRecord> = self.history().collect();
        let per_api = per_api_coverage(history.iter().copied());
        let stats = EntropyStats::new(&self.state.pool_frequencies);
        // Similarity is the hot spot (window x history Jaccard), so both sides
        // go through bitsets over a per-call API numbering.
        let mut ids = Interner::default();
        let hist_bits: Vec<(Bits, f64)> =
            history.iter().map(|r| (ids.bits(&r.group), r.observed_coverage)).collect();
        candidates
            .iter()
            .map(|&i| {
                let g = &self.state.records[i].group;
                let gb = ids.bits(g);
                ObjectiveVector {
                    similarity: hist_bits.iter().map(|(hb, c)| gb.jaccard(hb) * c).sum(),
                    predicted_coverage: predicted_from(g, &per_api),
                    neg_length: -(g.size() as i64),
                    entropy_gain: stats.gain(g),
                }
            })
            .collect()
    }

    /// Picks up to `k` pending groups and marks them as generating. An empty
    /// batch means the candidate space is exhausted.
    pub fn select_group_batch<R: Rng>(&mut self, k: usize, rng: &mut R) -> Vec<ApiGroup> {
        if k == 0 {
            return Vec::new();
        }
        self.refill();
        let pending = self.pending();
        if pending.is_empty() {
            return Vec::new();
        }
        let bootstrap = self.history().next().is_none();
        let chosen: Vec<usize> = if bootstrap || self.state.policy == SelectionPolicy::Random {
            let take = k.min(pending.len());
            let mut picks: Vec<usize> = index::sample(rng, pending.len(), take).into_iter().map(|i| pending[i]).collect();
            picks.sort_unstable();
            picks
        } else {
            self.pareto_pick(&pending, k)
        };
        chosen
            .into_iter()
            .map(|i| {
                let rec = &mut self.state.records[i];
                rec.status = GroupStatus::Generating;
                rec.group.clone()
            })
            .collect()
    }

    fn pareto_pick(&self, pending: &[usize], k: usize) -> Vec<usize> {
        let vectors = self.objectives(pending);
        let groups: Vec<&ApiGroup> = pending.iter().map(|&i| &self.state.records[i].group).collect();
        select_by_fronts(&vectors, &groups, k).into_iter().map(|i| pending[i]).collect()
    }

    /// Records the end of a generation attempt for `group`.
    pub fn finish_generation(&mut self, group: &ApiGroup, queries: u32, outcome: GenerationResultKind) {
        if let Some(rec) = self.record_mut(group) {
            rec.attempts += queries;
            rec.status = match outcome {
                GenerationResultKind::Accepted => GroupStatus::HasDriver,
                GenerationResultKind::Deferred => GroupStatus::Candidate,
                GenerationResultKind::Failed => GroupStatus::Exhausted,
            };
        }
        if outcome == GenerationResultKind::Accepted {
            for m in group.iter() {
                *self.state.pool_frequencies.entry(m.to_string()).or_insert(0) += 1;
            }
        }
    }

    /// Removes a retired driver's group from the pool frequency counts.
    pub fn driver_left_pool(&mut self, group: &ApiGroup) {
        for m in group.iter() {
            if let Some(c) = self.state.pool_frequencies.get_mut(m) {
                *c = c.saturating_sub(1);
                if *c == 0 {
                    self.state.pool_frequencies.remove(m);
                }
            }
        }
    }

    /// Feeds back the normalized coverage of one executed slice.
    pub fn record_execution(&mut self, group: &ApiGroup, coverage_fraction: f64) {
        if let Some(rec) = self.record_mut(group) {
            rec.executed_slices += 1;
            rec.observed_coverage = rec.observed_coverage.max(coverage_fraction.clamp(0.0, 1.0));
        }
    }

    pub fn groups_enumerated(&self) -> u64 {
        self.state.pulled
    }
}

/// Coarse generation outcome as seen by the group scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationResultKind {
    Accepted,
    /// Not attempted to completion (query budget); the group stays a candidate.
    Deferred,
    Failed,
}
