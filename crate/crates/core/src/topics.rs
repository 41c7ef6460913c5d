//! Conversation topics.
//!
//! Every ten seconds of session time the engine embeds each group's chat
//! history, clusters the embeddings with k-means++ and Lloyd iterations,
//! titles each cluster, and folds the titles into a registry whose ids never
//! change meaning. A new title that is close enough (cosine) to an existing
//! one reuses that topic's id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Task, DEFAULT_PROBLEM};
use crate::model::GroupId;

/// Title shown for groups that have not chatted yet.
pub const NO_CONVERSATION: &str = "No Conversation";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicId(pub u32);

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A group's topic: the sentinel or a registered id. Serializes as the
/// string `"No Conversation"` or the bare id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum TopicRef {
    #[default]
    NoConversation,
    Topic(TopicId),
}

impl Serialize for TopicRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TopicRef::NoConversation => s.serialize_str(NO_CONVERSATION),
            TopicRef::Topic(id) => s.serialize_u32(id.0),
        }
    }
}

impl<'de> Deserialize<'de> for TopicRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Id(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Id(id) => Ok(TopicRef::Topic(TopicId(id))),
            Repr::Text(t) if t == NO_CONVERSATION => Ok(TopicRef::NoConversation),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unknown topic reference {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KMeansError {
    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("vectors have different dimensions")]
    DimensionMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationEmbedding {
    pub group_id: GroupId,
    pub vector: Vec<f64>,
    pub message_count_at_embed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of each input point, in input order.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step, starting with the initial one.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn check_dims(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Result<usize, KMeansError> {
    let dim = points.first().or(centroids.first()).map_or(0, Vec::len);
    if points.iter().chain(centroids).any(|p| p.len() != dim) {
        return Err(KMeansError::DimensionMismatch);
    }
    Ok(dim)
}

/// k-means++ seeding. The first centroid is uniform over `points`; each next
/// one is drawn with probability proportional to its squared distance from
/// the nearest centroid chosen so far. When every remaining weight is zero
/// the draw falls back to uniform over points not yet picked.
pub fn kmeanspp_seed<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if k > points.len() {
        return Err(KMeansError::KTooLarge { k, n: points.len() });
    }
    check_dims(points, &[])?;
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut nearest: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in nearest.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            let unpicked: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
            unpicked[rng.random_range(0..unpicked.len())]
        };
        chosen.push(next);
        for (w, p) in nearest.iter_mut().zip(points) {
            *w = w.min(squared_distance(p, &points[next]));
        }
    }
    Ok(chosen.into_iter().map(|i| points[i].clone()).collect())
}

/// Nearest centroid (lowest index on ties) and the squared distance to it.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, f64) {
    let mut labels = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for p in points {
        let (j, d) = nearest(p, centroids);
        labels.push(j);
        dists.push(d);
    }
    let inertia = dists.iter().sum();
    (labels, dists, inertia)
}

/// Lloyd refinement from `initial` centroids. Stops when no centroid moves
/// by `tol` or more, when assignments stop changing, or after `max_iters`
/// update steps. An emptied cluster is moved onto the point farthest from its
/// own centroid.
pub fn lloyd_cluster(
    points: &[Vec<f64>],
    initial: &[Vec<f64>],
    max_iters: usize,
    tol: f64,
) -> Result<ClusteringResult, KMeansError> {
    if initial.is_empty() {
        return Err(KMeansError::ZeroK);
    }
    let dim = check_dims(points, initial)?;
    let k = initial.len();
    let mut centroids = initial.to_vec();
    let (mut labels, mut dists, mut inertia) = assign(points, &centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iters && !points.is_empty() {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&labels) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &n), old)| if n == 0 { old.clone() } else { s.into_iter().map(|x| x / n as f64).collect() })
            .collect();
        let mut taken = BTreeSet::new();
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = (0..points.len())
                .filter(|i| !taken.contains(i))
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then_with(|| b.cmp(&a)));
            if let Some(i) = far {
                taken.insert(i);
                next[j] = points[i].clone();
            }
        }
        let shift = centroids.iter().zip(&next).map(|(a, b)| squared_distance(a, b).sqrt()).fold(0.0, f64::max);
        let (new_labels, new_dists, new_inertia) = assign(points, &next);
        if new_inertia > inertia {
            // only reachable through rounding; keep the better solution
            break;
        }
        let unchanged = new_labels == labels;
        centroids = next;
        labels = new_labels;
        dists = new_dists;
        inertia = new_inertia;
        history.push(inertia);
        if shift < tol || unchanged {
            break;
        }
    }
    Ok(ClusteringResult { k, centroids, assignments: labels, inertia, inertia_history: history, iterations })
}

/// A registered topic. The id, summary, and embedding are fixed at
/// registration; only the member set changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEntry {
    pub id: TopicId,
    pub summary: String,
    pub centroid_embedding: Vec<f64>,
    pub member_group_ids: BTreeSet<GroupId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopicRegistry {
    #[serde(with = "entry_list")]
    topics: BTreeMap<TopicId, TopicEntry>,
    assignments: BTreeMap<GroupId, TopicRef>,
    next_id: u32,
}

/// Topics travel as a list; each entry carries its own id.
mod entry_list {
    use super::{BTreeMap, TopicEntry, TopicId};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(topics: &BTreeMap<TopicId, TopicEntry>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(topics.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<TopicId, TopicEntry>, D::Error> {
        Ok(Vec::<TopicEntry>::deserialize(d)?.into_iter().map(|e| (e.id, e)).collect())
    }
}

impl TopicRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn topics(&self) -> impl Iterator<Item = &TopicEntry> {
        self.topics.values()
    }

    pub fn get(&self, id: TopicId) -> Option<&TopicEntry> {
        self.topics.get(&id)
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn topic_of(&self, group: &str) -> TopicRef {
        self.assignments.get(group).copied().unwrap_or_default()
    }

    pub fn assignments(&self) -> &BTreeMap<GroupId, TopicRef> {
        &self.assignments
    }

    /// Display text for a topic reference.
    pub fn summary(&self, topic: TopicRef) -> &str {
        match topic {
            TopicRef::NoConversation => NO_CONVERSATION,
            TopicRef::Topic(id) => self.topics.get(&id).map_or(NO_CONVERSATION, |t| t.summary.as_str()),
        }
    }

    /// Reverse of [`TopicRegistry::summary`].
    pub fn find_by_summary(&self, summary: &str) -> Option<TopicRef> {
        if summary == NO_CONVERSATION {
            return Some(TopicRef::NoConversation);
        }
        self.topics.values().find(|t| t.summary == summary).map(|t| TopicRef::Topic(t.id))
    }

    fn register(&mut self, summary: String, embedding: Vec<f64>) -> TopicId {
        let id = TopicId(self.next_id);
        self.next_id += 1;
        self.topics.insert(id, TopicEntry { id, summary, centroid_embedding: embedding, member_group_ids: BTreeSet::new() });
        id
    }

    /// Moves `group` to `topic`, keeping every group in exactly one topic.
    pub fn assign(&mut self, group: &str, topic: TopicRef) {
        if let Some(TopicRef::Topic(old)) = self.assignments.get(group) {
            if let Some(entry) = self.topics.get_mut(old) {
                entry.member_group_ids.remove(group);
            }
        }
        if let TopicRef::Topic(id) = topic {
            if let Some(entry) = self.topics.get_mut(&id) {
                entry.member_group_ids.insert(group.to_owned());
            }
        }
        self.assignments.insert(group.to_owned(), topic);
    }

    /// Most similar registered topic and its cosine similarity.
    pub fn closest(&self, embedding: &[f64]) -> Option<(TopicId, f64)> {
        let mut best: Option<(TopicId, f64)> = None;
        for entry in self.topics.values() {
            let sim = cosine_similarity(embedding, &entry.centroid_embedding);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((entry.id, sim));
            }
        }
        best
    }
}

const MINOR_WORDS: &[&str] =
    &["a", "an", "the", "and", "but", "or", "nor", "for", "on", "at", "to", "by", "of", "in", "with", "as"];

/// Title case, at most eight words.
pub fn normalize_title(raw: &str) -> String {
    let words: Vec<String> = raw
        .split_whitespace()
        .take(8)
        .enumerate()
        .map(|(i, w)| {
            let lower = w.to_lowercase();
            if i > 0 && MINOR_WORDS.contains(&lower.as_str()) {
                return lower;
            }
            let mut chars = w.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        })
        .collect();
    words.join(" ")
}

/// Short title for a cluster of conversations. Returns the sentinel, without
/// a model call, when there is no message text.
pub fn summarize_cluster(gateway: &Gateway, conversations: &[String]) -> Result<String, GatewayError> {
    let messages: Vec<&str> = conversations.iter().map(|m| m.trim()).filter(|m| !m.is_empty()).collect();
    if messages.is_empty() {
        return Ok(NO_CONVERSATION.to_string());
    }
    let out = gateway.complete_task(Task::SummarizeTopic, DEFAULT_PROBLEM, serde_json::json!({ "messages": messages }))?;
    let title = normalize_title(out["summary"].as_str().unwrap_or_default());
    if title.is_empty() {
        return Err(GatewayError::BackendError { status: None, message: "empty topic title".into() });
    }
    Ok(title)
}

/// Returns the id of a registered topic whose embedding is at least
/// `threshold` cosine-similar to `summary`, registering a new one otherwise.
pub fn match_or_register_topic(
    gateway: &Gateway,
    summary: &str,
    registry: &mut TopicRegistry,
    threshold: f64,
) -> Result<TopicId, GatewayError> {
    let embedding = gateway.embed(summary)?;
    if let Some((id, sim)) = registry.closest(&embedding) {
        if sim >= threshold {
            return Ok(id);
        }
    }
    Ok(registry.register(summary.to_string(), embedding))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicConfig {
    pub k_max: usize,
    pub dedup_threshold: f64,
    pub recluster_every_s: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Most recent messages per group sent for titling.
    pub messages_per_group: usize,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self {
            k_max: 6,
            dedup_threshold: 0.85,
            recluster_every_s: 10.0,
            seed: 0,
            max_iters: 100,
            tol: 1e-9,
            messages_per_group: 20,
        }
    }
}

/// Everything one clustering cycle needs, captured from the session at a
/// frame boundary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopicInput {
    pub time_s: f64,
    /// Chat texts per group, oldest first. Every rostered group is present.
    pub conversations: BTreeMap<GroupId, Vec<String>>,
    pub registry: TopicRegistry,
    pub embeddings: BTreeMap<GroupId, ConversationEmbedding>,
}

/// Result of one cycle; replaces the session's registry wholesale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicUpdate {
    pub time_s: f64,
    pub registry: TopicRegistry,
    pub embeddings: BTreeMap<GroupId, ConversationEmbedding>,
    pub assignments: BTreeMap<GroupId, TopicRef>,
}

/// One re-clustering pass. Gateway failures are local: a group whose
/// embedding or cluster title fails keeps its previous topic.
pub fn run_topic_cycle(input: TopicInput, gateway: &Gateway, config: &TopicConfig) -> TopicUpdate {
    let TopicInput { time_s, conversations, mut registry, mut embeddings } = input;
    let mut assignments = BTreeMap::new();
    let mut clustered: Vec<&GroupId> = Vec::new();
    for (group, messages) in &conversations {
        if messages.is_empty() {
            assignments.insert(group.clone(), TopicRef::NoConversation);
            continue;
        }
        if embeddings.get(group).is_none_or(|e| e.message_count_at_embed != messages.len()) {
            match gateway.embed(&messages.join("\n")) {
                Ok(vector) => {
                    embeddings.insert(
                        group.clone(),
                        ConversationEmbedding { group_id: group.clone(), vector, message_count_at_embed: messages.len() },
                    );
                }
                Err(e) => {
                    tracing::warn!(%group, error = %e, "conversation embedding failed");
                    if !embeddings.contains_key(group) {
                        continue;
                    }
                }
            }
        }
        clustered.push(group);
    }
    embeddings.retain(|g, _| conversations.contains_key(g));

    if !clustered.is_empty() {
        let points: Vec<Vec<f64>> = clustered.iter().map(|g| embeddings[*g].vector.clone()).collect();
        let k = config.k_max.max(1).min(points.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ time_s.to_bits());
        let result = kmeanspp_seed(&points, k, &mut rng)
            .and_then(|seeds| lloyd_cluster(&points, &seeds, config.max_iters, config.tol));
        match result {
            Ok(result) => {
                for cluster in 0..result.k {
                    let members: Vec<&GroupId> =
                        clustered.iter().zip(&result.assignments).filter(|(_, &c)| c == cluster).map(|(g, _)| *g).collect();
                    if members.is_empty() {
                        continue;
                    }
                    let texts: Vec<String> = members
                        .iter()
                        .flat_map(|g| {
                            let msgs = &conversations[*g];
                            msgs[msgs.len().saturating_sub(config.messages_per_group)..].iter().cloned()
                        })
                        .collect();
                    let topic = summarize_cluster(gateway, &texts)
                        .and_then(|title| match_or_register_topic(gateway, &title, &mut registry, config.dedup_threshold));
                    match topic {
                        Ok(id) => {
                            for g in members {
                                assignments.insert(g.clone(), TopicRef::Topic(id));
                            }
                        }
                        Err(e) => tracing::warn!(cluster, error = %e, "topic titling failed; groups keep their topic"),
                    }
                }
            }
            Err(e) => tracing::warn!(error = %e, "clustering failed; groups keep their topic"),
        }
    }
    for (group, topic) in &assignments {
        registry.assign(group, *topic);
    }
    let assignments = conversations.keys().map(|g| (g.clone(), registry.topic_of(g))).collect();
    TopicUpdate { time_s, registry, embeddings, assignments }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| vec![*x]).collect()
    }

    /// Minimum inertia over every assignment of points to k labels, with
    /// each label's centroid at the mean of its points.
    fn exhaustive_best(points: &[Vec<f64>], k: usize) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            let labels: Vec<usize> = (0..n)
                .map(|_| {
                    let l = c % k;
                    c /= k;
                    l
                })
                .collect();
            let mut total = 0.0;
            for j in 0..k {
                let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                let dim = members[0].len();
                let mean: Vec<f64> =
                    (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
                total += members.iter().map(|p| squared_distance(p, &mean)).sum::<f64>();
            }
            best = best.min(total);
        }
        best
    }

    #[test]
    fn one_dimensional_example() {
        let points = pts(&[0.0, 1.0, 9.0, 10.0]);
        let r = lloyd_cluster(&points, &pts(&[0.0, 10.0]), 100, 1e-12).unwrap();
        assert_eq!(r.centroids, pts(&[0.5, 9.5]));
        assert_eq!(r.inertia, 1.0);
        assert_eq!(r.assignments, vec![0, 0, 1, 1]);
        assert_eq!(exhaustive_best(&points, 2), 1.0);
    }

    #[test]
    fn fixed_point_converges_in_one_iteration() {
        let points = pts(&[1.0, 1.0, 5.0, 7.0]);
        let r = lloyd_cluster(&points, &pts(&[1.0, 5.0, 7.0]), 100, 1e-12).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn zero_iterations_keeps_initial_centroids() {
        let points = pts(&[0.0, 1.0, 9.0, 10.0]);
        let r = lloyd_cluster(&points, &pts(&[1.0, 2.0]), 0, 1e-12).unwrap();
        assert_eq!(r.centroids, pts(&[1.0, 2.0]));
        assert_eq!(r.assignments, vec![0, 0, 1, 1]);
        assert_eq!(r.inertia, 1.0 + 49.0 + 64.0);
    }

    #[test]
    fn empty_cluster_takes_farthest_point() {
        let points = pts(&[0.0, 1.0, 2.0, 50.0]);
        let r = lloyd_cluster(&points, &pts(&[1.0, 1000.0]), 1, 1e-12).unwrap();
        assert_eq!(r.centroids[1], vec![50.0]);
        assert_eq!(r.assignments, vec![0, 0, 0, 1]);
    }

    #[test]
    fn dimension_and_k_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(kmeanspp_seed(&pts(&[1.0]), 2, &mut rng), Err(KMeansError::KTooLarge { k: 2, n: 1 }));
        assert_eq!(kmeanspp_seed(&pts(&[1.0]), 0, &mut rng), Err(KMeansError::ZeroK));
        let mixed = vec![vec![1.0], vec![1.0, 2.0]];
        assert_eq!(kmeanspp_seed(&mixed, 1, &mut rng), Err(KMeansError::DimensionMismatch));
        assert_eq!(lloyd_cluster(&pts(&[1.0]), &[vec![1.0, 2.0]], 5, 0.0), Err(KMeansError::DimensionMismatch));
    }

    #[test]
    fn degenerate_seeding_picks_distinct_points() {
        let points = pts(&[3.0; 5]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(kmeanspp_seed(&points, 5, &mut rng).unwrap().len(), 5);
        }
    }

    #[test]
    fn single_centroid_is_reproducible() {
        let points = pts(&[1.0, 2.0, 3.0, 4.0]);
        let a = kmeanspp_seed(&points, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = kmeanspp_seed(&points, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_seed_is_uniform() {
        let points = pts(&[0.0, 1.0, 2.0, 3.0]);
        let mut counts = [0usize; 4];
        for seed in 0..4000 {
            let c = kmeanspp_seed(&points, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            counts[c[0][0] as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
    }

    proptest! {
        #[test]
        fn lloyd_is_monotone_and_locally_optimal(
            raw in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2), 1..25),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let k = k.min(raw.len());
            let seeds = kmeanspp_seed(&raw, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let r = lloyd_cluster(&raw, &seeds, 100, 0.0).unwrap();
            for w in r.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            let total: f64 = raw.iter().zip(&r.assignments).map(|(p, &j)| squared_distance(p, &r.centroids[j])).sum();
            prop_assert!((total - r.inertia).abs() <= 1e-9 * (1.0 + total));
            for (p, &j) in raw.iter().zip(&r.assignments) {
                let own = squared_distance(p, &r.centroids[j]);
                for c in &r.centroids {
                    prop_assert!(own <= squared_distance(p, c));
                }
            }
        }

        #[test]
        fn lloyd_never_beats_exhaustive(raw in prop::collection::vec(-20.0f64..20.0, 2..7), seed in any::<u64>()) {
            let points = pts(&raw);
            let seeds = kmeanspp_seed(&points, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let r = lloyd_cluster(&points, &seeds, 100, 0.0).unwrap();
            prop_assert!(r.inertia + 1e-9 >= exhaustive_best(&points, 2));
        }
    }

    #[test]
    fn topic_ref_wire_form() {
        assert_eq!(serde_json::to_string(&TopicRef::NoConversation).unwrap(), "\"No Conversation\"");
        assert_eq!(serde_json::to_string(&TopicRef::Topic(TopicId(4))).unwrap(), "4");
        assert_eq!(serde_json::from_str::<TopicRef>("4").unwrap(), TopicRef::Topic(TopicId(4)));
        assert_eq!(serde_json::from_str::<TopicRef>("\"No Conversation\"").unwrap(), TopicRef::NoConversation);
        assert!(serde_json::from_str::<TopicRef>("\"Loops\"").is_err());
    }

    #[test]
    fn titles_are_normalized() {
        assert_eq!(normalize_title("correcting function implementation for counting"), "Correcting Function Implementation for Counting");
        assert_eq!(normalize_title("one two three four five six seven eight nine ten"), "One Two Three Four Five Six Seven Eight");
    }

    #[test]
    fn cluster_summary_from_model() {
        let backend = Arc::new(ScriptedBackend::new(vec![Ok(
            r#"{"summary": "Correcting Function Implementation for Counting"}"#.into(),
        )]));
        let gw = Gateway::new(backend, 2, 2);
        let msgs = vec!["where is a count used?".to_string(), "it initializes your count value".to_string()];
        assert_eq!(summarize_cluster(&gw, &msgs).unwrap(), "Correcting Function Implementation for Counting");
    }

    #[test]
    fn empty_conversation_skips_the_model() {
        let backend = Arc::new(ScriptedBackend::failing());
        let gw = Gateway::new(backend.clone(), 2, 2);
        assert_eq!(summarize_cluster(&gw, &[]).unwrap(), NO_CONVERSATION);
        assert_eq!(summarize_cluster(&gw, &["  ".into()]).unwrap(), NO_CONVERSATION);
        assert!(backend.calls().is_empty());
    }

    #[test]
    fn stub_titles_are_deterministic() {
        let gw = Gateway::stub(1);
        let a = summarize_cluster(&gw, &["count loop".into(), "loop variable count".into()]).unwrap();
        let b = summarize_cluster(&gw, &["variable count loop".into(), "count loop".into()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dedup_by_similarity() {
        let gw = Gateway::stub(2);
        let mut reg = TopicRegistry::new();
        let a = match_or_register_topic(&gw, "Counting Values Below Hundred", &mut reg, 0.85).unwrap();
        assert_eq!(match_or_register_topic(&gw, "Counting Values Below Hundred", &mut reg, 0.85).unwrap(), a);
        // same token multiset, same stub vector
        assert_eq!(match_or_register_topic(&gw, "Hundred Below Values Counting", &mut reg, 0.85).unwrap(), a);
        let b = match_or_register_topic(&gw, "Weekend Pizza Plans", &mut reg, 0.85).unwrap();
        assert_ne!(a, b);
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.get(a).unwrap().summary, "Counting Values Below Hundred");
    }

    #[test]
    fn registry_membership_is_exclusive() {
        let gw = Gateway::stub(0);
        let mut reg = TopicRegistry::new();
        let a = match_or_register_topic(&gw, "Loops", &mut reg, 0.85).unwrap();
        let b = match_or_register_topic(&gw, "Pizza", &mut reg, 0.85).unwrap();
        reg.assign("g1", TopicRef::Topic(a));
        reg.assign("g1", TopicRef::Topic(b));
        assert!(reg.get(a).unwrap().member_group_ids.is_empty());
        assert!(reg.get(b).unwrap().member_group_ids.contains("g1"));
        reg.assign("g1", TopicRef::NoConversation);
        assert!(reg.get(b).unwrap().member_group_ids.is_empty());
        assert_eq!(reg.summary(reg.topic_of("g1")), NO_CONVERSATION);
    }

    fn input(conversations: &[(&str, &[&str])]) -> TopicInput {
        TopicInput {
            time_s: 10.0,
            conversations: conversations
                .iter()
                .map(|(g, m)| (g.to_string(), m.iter().map(|s| s.to_string()).collect()))
                .collect(),
            ..TopicInput::default()
        }
    }

    #[test]
    fn cycle_assigns_every_group() {
        let gw = Gateway::stub(0);
        let inp = input(&[
            ("g1", &["count the values under hundred", "count loop"]),
            ("g2", &["count values loop under hundred"]),
            ("g3", &[]),
        ]);
        let a = run_topic_cycle(inp.clone(), &gw, &TopicConfig::default());
        let b = run_topic_cycle(inp, &gw, &TopicConfig::default());
        assert_eq!(a, b);
        assert_eq!(a.assignments["g3"], TopicRef::NoConversation);
        assert!(matches!(a.assignments["g1"], TopicRef::Topic(_)));
        assert!(matches!(a.assignments["g2"], TopicRef::Topic(_)));
        assert_eq!(a.embeddings.len(), 2);
        for (g, t) in &a.assignments {
            assert_eq!(a.registry.topic_of(g), *t);
        }
    }

    #[test]
    fn cycle_keeps_topics_when_gateway_fails() {
        let gw = Gateway::stub(0);
        let first = run_topic_cycle(input(&[("g1", &["count loop"])]), &gw, &TopicConfig::default());
        let broken = Gateway::new(Arc::new(ScriptedBackend::failing()), 2, 2);
        let mut next = input(&[("g1", &["count loop", "more text"])]);
        next.registry = first.registry.clone();
        next.embeddings = first.embeddings.clone();
        let second = run_topic_cycle(next, &broken, &TopicConfig::default());
        assert_eq!(second.assignments["g1"], first.assignments["g1"]);
    }
}
