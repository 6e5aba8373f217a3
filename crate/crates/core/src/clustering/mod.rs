//! Entity clusterings: K-means over entity embeddings, Brown clustering over
//! entity-context streams, and the measures built on top of cluster types
//! (gold-candidate separation, combination selection).

mod brown;
mod kmeans;

pub use brown::{brown_cluster, BrownLog, BrownMerge};
pub use kmeans::{kmeans, KmeansIteration, KmeansLog};

use crate::artifact::{ArtifactReader, ArtifactWriter};
use crate::corpus::KnowledgeBase;
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// The five clustering flavors. The name refers to the context format the
/// underlying entity representation was trained on, not to what is clustered;
/// every flavor assigns cluster ids to entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flavor {
    Word,
    Surface,
    Entity,
    Synset,
    Brown,
}

impl Flavor {
    pub const ALL: [Flavor; 5] =
        [Flavor::Word, Flavor::Surface, Flavor::Entity, Flavor::Synset, Flavor::Brown];

    /// Flavors participating in combination selection. The Entity flavor is
    /// excluded: its typing model only exists in the second ranking stage.
    pub const COMBO: [Flavor; 4] =
        [Flavor::Word, Flavor::Surface, Flavor::Synset, Flavor::Brown];

    pub fn as_str(&self) -> &'static str {
        match self {
            Flavor::Word => "Word",
            Flavor::Surface => "Surface",
            Flavor::Entity => "Entity",
            Flavor::Synset => "Synset",
            Flavor::Brown => "Brown",
        }
    }
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "word" => Ok(Flavor::Word),
            "surface" => Ok(Flavor::Surface),
            "entity" => Ok(Flavor::Entity),
            "synset" => Ok(Flavor::Synset),
            "brown" => Ok(Flavor::Brown),
            other => Err(Error::invalid(format!("unknown clustering flavor `{other}`"))),
        }
    }
}

/// A finished clustering: token (entity id) to cluster id in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub flavor: Flavor,
    pub k: u32,
    assignment: BTreeMap<String, u32>,
}

impl Clustering {
    pub fn new(flavor: Flavor, k: u32) -> Self {
        Clustering { flavor, k, assignment: BTreeMap::new() }
    }

    pub fn from_assignment(
        flavor: Flavor,
        k: u32,
        assignment: BTreeMap<String, u32>,
    ) -> Result<Self> {
        for (token, &id) in &assignment {
            if id >= k {
                return Err(Error::invalid(format!(
                    "cluster id {id} for `{token}` out of range (k = {k})"
                )));
            }
        }
        Ok(Clustering { flavor, k, assignment })
    }

    pub fn insert(&mut self, token: impl Into<String>, id: u32) -> Result<()> {
        if id >= self.k {
            return Err(Error::invalid(format!("cluster id {id} out of range (k = {})", self.k)));
        }
        self.assignment.insert(token.into(), id);
        Ok(())
    }

    pub fn cluster(&self, token: &str) -> Option<u32> {
        self.assignment.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Assignments in lexicographic token order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.assignment.iter().map(|(t, &c)| (t.as_str(), c))
    }

    /// Cluster ids that actually have members, ascending.
    pub fn occupied_clusters(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.assignment.values().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ArtifactWriter::create(path, "clustering")?;
        w.line(format_args!("#{} {}", self.flavor, self.k))?;
        for (token, id) in self.iter() {
            w.line(format_args!("{token}\t{id}"))?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = ArtifactReader::open(path, "clustering", true)?;
        let (no, header) = reader
            .next_line()?
            .ok_or_else(|| reader.err(0, "empty clustering file"))?;
        let body = header
            .strip_prefix('#')
            .ok_or_else(|| reader.err(no, "expected `#<flavor> <k>` header"))?;
        let mut parts = body.split_whitespace();
        let flavor: Flavor = parts
            .next()
            .ok_or_else(|| reader.err(no, "missing flavor"))?
            .parse()
            .map_err(|e: Error| reader.err(no, e.to_string()))?;
        let k: u32 = parts
            .next()
            .ok_or_else(|| reader.err(no, "missing k"))?
            .parse()
            .map_err(|_| reader.err(no, "invalid k"))?;
        let mut clustering = Clustering::new(flavor, k);
        while let Some((no, line)) = reader.next_line()? {
            if line.trim().is_empty() {
                continue;
            }
            let (token, id) = line
                .split_once('\t')
                .ok_or_else(|| reader.err(no, "expected `token\\tcluster_id`"))?;
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| reader.err(no, format!("invalid cluster id `{id}`")))?;
            clustering
                .insert(token, id)
                .map_err(|e| reader.err(no, e.to_string()))?;
        }
        Ok(clustering)
    }
}

/// Copies cluster ids into the KB entities' `cluster_types` under the
/// clustering's flavor, overwriting previous assignments of that flavor.
/// Returns how many entities received an id.
pub fn assign_types(clustering: &Clustering, kb: &mut KnowledgeBase) -> usize {
    let mut assigned = 0;
    for entity in kb.iter_mut() {
        if let Some(id) = clustering.cluster(&entity.id) {
            entity.cluster_types.insert(clustering.flavor, id);
            assigned += 1;
        }
    }
    assigned
}

/// One mention's candidate set plus its gold entity, the unit both AGCCS and
/// combination selection operate on.
#[derive(Debug, Clone)]
pub struct MentionCandidates {
    pub gold: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgccsResult {
    /// Mean size of the gold-containing candidate group.
    pub value: f64,
    pub eligible: usize,
    pub skipped: usize,
}

/// Average gold-candidate cluster-set size: per mention, candidates are
/// grouped by cluster type (unclustered candidates form singleton groups) and
/// the size of the group containing the gold is averaged over mentions.
/// Mentions whose gold is missing from the candidate set or unclustered are
/// skipped; no eligible mention at all is an error. Lower is better; the
/// value lies in [1, max candidate set size].
pub fn agccs(clustering: &Clustering, mentions: &[MentionCandidates]) -> Result<AgccsResult> {
    let mut total = 0usize;
    let mut eligible = 0usize;
    let mut skipped = 0usize;
    for mention in mentions {
        if !mention.candidates.iter().any(|c| c == &mention.gold) {
            skipped += 1;
            continue;
        }
        let Some(gold_cluster) = clustering.cluster(&mention.gold) else {
            skipped += 1;
            continue;
        };
        let mut distinct: Vec<&str> = mention.candidates.iter().map(|s| s.as_str()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let group_size = distinct
            .iter()
            .filter(|c| clustering.cluster(c) == Some(gold_cluster))
            .count();
        total += group_size;
        eligible += 1;
    }
    if eligible == 0 {
        return Err(Error::invalid(
            "no eligible mentions: every gold was missing from its candidate set or unclustered",
        ));
    }
    Ok(AgccsResult { value: total as f64 / eligible as f64, eligible, skipped })
}

/// Typing probabilities produced by one clustering option: for each mention
/// (parallel to the `MentionCandidates` slice), the probability assigned to
/// each candidate's cluster type given the mention's context.
#[derive(Debug, Clone)]
pub struct OptionProbs {
    pub flavor: Flavor,
    pub name: String,
    pub probs: Vec<HashMap<String, f64>>,
}

impl OptionProbs {
    fn prob(&self, mention: usize, candidate: &str) -> Result<f64> {
        self.probs
            .get(mention)
            .and_then(|m| m.get(candidate))
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "missing typing probability for mention {mention}, candidate `{candidate}`, \
                     option `{}` ({} flavor)",
                    self.name, self.flavor
                ))
            })
    }
}

/// Penalty of one clustering option: over all mentions, the summed probability
/// advantage of non-gold candidates over the gold, counting only candidates
/// scored strictly higher than the gold. Lower is better.
pub fn eq1_penalty(mentions: &[MentionCandidates], option: &OptionProbs) -> Result<f64> {
    if option.probs.len() != mentions.len() {
        return Err(Error::invalid(format!(
            "option `{}` has probabilities for {} mentions, expected {}",
            option.name,
            option.probs.len(),
            mentions.len()
        )));
    }
    let mut penalty = 0.0;
    for (idx, mention) in mentions.iter().enumerate() {
        if !mention.candidates.iter().any(|c| c == &mention.gold) {
            return Err(Error::invalid(format!(
                "mention {idx}: gold `{}` missing from candidate set",
                mention.gold
            )));
        }
        let p_gold = option.prob(idx, &mention.gold)?;
        let mut seen = std::collections::HashSet::new();
        for candidate in &mention.candidates {
            if candidate == &mention.gold || !seen.insert(candidate.as_str()) {
                continue;
            }
            let p = option.prob(idx, candidate)?;
            if p > p_gold {
                penalty += p - p_gold;
            }
        }
    }
    Ok(penalty)
}

/// One point of the combination search space: a choice of clustering option
/// for each of the four combo flavors, with the summed penalty.
#[derive(Debug, Clone)]
pub struct Combination {
    pub choices: BTreeMap<Flavor, String>,
    pub penalty: f64,
}

/// Scores every cross-flavor combination of the supplied options by summed
/// penalty and returns the best (lowest) `top` combinations, ascending. Each
/// combo flavor (Word, Surface, Synset, Brown) must have at least one option;
/// options of other flavors are rejected.
pub fn select_combinations(
    mentions: &[MentionCandidates],
    options: &[OptionProbs],
    top: usize,
) -> Result<Vec<Combination>> {
    let mut per_flavor: BTreeMap<Flavor, Vec<(&OptionProbs, f64)>> = BTreeMap::new();
    for option in options {
        if !Flavor::COMBO.contains(&option.flavor) {
            return Err(Error::invalid(format!(
                "option `{}` has flavor {} which does not participate in combination selection",
                option.name, option.flavor
            )));
        }
        let penalty = eq1_penalty(mentions, option)?;
        per_flavor.entry(option.flavor).or_default().push((option, penalty));
    }
    for flavor in Flavor::COMBO {
        if !per_flavor.contains_key(&flavor) {
            return Err(Error::invalid(format!("no clustering option supplied for flavor {flavor}")));
        }
    }

    let mut combos = vec![Combination { choices: BTreeMap::new(), penalty: 0.0 }];
    for flavor in Flavor::COMBO {
        let mut next = Vec::with_capacity(combos.len() * per_flavor[&flavor].len());
        for combo in &combos {
            for (option, penalty) in &per_flavor[&flavor] {
                let mut choices = combo.choices.clone();
                choices.insert(flavor, option.name.clone());
                next.push(Combination { choices, penalty: combo.penalty + penalty });
            }
        }
        combos = next;
    }
    combos.sort_by(|a, b| {
        a.penalty
            .partial_cmp(&b.penalty)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.choices.cmp(&b.choices))
    });
    combos.truncate(top);
    Ok(combos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clustering(pairs: &[(&str, u32)], k: u32) -> Clustering {
        let mut c = Clustering::new(Flavor::Word, k);
        for (t, id) in pairs {
            c.insert(*t, *id).unwrap();
        }
        c
    }

    #[test]
    fn save_load_roundtrip() {
        let c = clustering(&[("E1", 0), ("E2", 3), ("E3", 0)], 4);
        let dir = std::env::temp_dir().join(format!("nedkit-clu-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.tsv");
        c.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("#Word 4"));
        let back = Clustering::load(&path).unwrap();
        assert_eq!(c, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn out_of_range_id_rejected() {
        let mut c = Clustering::new(Flavor::Entity, 2);
        assert!(c.insert("E1", 2).is_err());
    }

    #[test]
    fn assign_types_fills_kb() {
        use crate::corpus::{CoarseType, Entity, KnowledgeBase};
        let mut kb = KnowledgeBase::new();
        for id in ["E1", "E2"] {
            kb.insert(Entity {
                id: id.to_string(),
                synsets: vec![],
                coarse_type: CoarseType::Misc,
                frequency: 0,
                cluster_types: BTreeMap::new(),
            })
            .unwrap();
        }
        let c = clustering(&[("E1", 1)], 2);
        assert_eq!(assign_types(&c, &mut kb), 1);
        assert_eq!(kb.get("E1").unwrap().cluster_types.get(&Flavor::Word), Some(&1));
        assert!(kb.get("E2").unwrap().cluster_types.is_empty());
    }

    fn mention(gold: &str, candidates: &[&str]) -> MentionCandidates {
        MentionCandidates {
            gold: gold.to_string(),
            candidates: candidates.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn agccs_mean_of_gold_group_sizes() {
        let c = clustering(&[("e1", 0), ("e2", 0), ("e3", 0), ("e4", 1)], 2);
        let mentions = vec![
            mention("e2", &["e1", "e2", "e3", "e4"]), // gold group {e1,e2,e3} size 3
            mention("e4", &["e1", "e4"]),             // gold group {e4} size 1
        ];
        let r = agccs(&c, &mentions).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!((r.eligible, r.skipped), (2, 0));
    }

    #[test]
    fn agccs_unclustered_candidates_are_singletons() {
        let c = clustering(&[("e1", 0), ("e2", 0)], 1);
        // "ghost" is unclustered: its singleton group never joins the gold's.
        let r = agccs(&c, &[mention("e1", &["e1", "e2", "ghost"])]).unwrap();
        assert_eq!(r.value, 2.0);
    }

    #[test]
    fn agccs_skips_ineligible_and_errors_when_none() {
        let c = clustering(&[("e1", 0)], 1);
        let r = agccs(
            &c,
            &[
                mention("e1", &["e1"]),
                mention("e1", &["e2"]),      // gold not a candidate
                mention("ghost", &["ghost"]), // gold unclustered
            ],
        )
        .unwrap();
        assert_eq!((r.eligible, r.skipped), (1, 2));
        assert!(agccs(&c, &[mention("e9", &["e1"])]).is_err());
    }

    #[test]
    fn agccs_duplicate_candidates_count_once() {
        let c = clustering(&[("e1", 0), ("e2", 0)], 1);
        let r = agccs(&c, &[mention("e1", &["e1", "e2", "e2", "e2"])]).unwrap();
        assert_eq!(r.value, 2.0);
    }

    fn option(flavor: Flavor, name: &str, probs: Vec<Vec<(&str, f64)>>) -> OptionProbs {
        OptionProbs {
            flavor,
            name: name.to_string(),
            probs: probs
                .into_iter()
                .map(|m| m.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
                .collect(),
        }
    }

    #[test]
    fn penalty_counts_only_candidates_beating_gold() {
        let mentions = vec![mention("g", &["g", "a", "b"])];
        let opt = option(
            Flavor::Word,
            "w16",
            vec![vec![("g", 0.3), ("a", 0.5), ("b", 0.2)]],
        );
        // Only a (0.5 > 0.3) contributes: 0.2.
        let p = eq1_penalty(&mentions, &opt).unwrap();
        assert!((p - 0.2).abs() < 1e-12);
    }

    #[test]
    fn penalty_missing_probability_names_the_hole() {
        let mentions = vec![mention("g", &["g", "a"])];
        let opt = option(Flavor::Brown, "b8", vec![vec![("g", 0.3)]]);
        let err = eq1_penalty(&mentions, &opt).unwrap_err().to_string();
        assert!(err.contains("candidate `a`") && err.contains("b8") && err.contains("Brown"), "{err}");
    }

    #[test]
    fn combinations_sorted_ascending_and_cut() {
        let mentions = vec![mention("g", &["g", "a"])];
        let mk = |flavor, name, pa: f64| option(flavor, name, vec![vec![("g", 0.4), ("a", pa)]]);
        let options = vec![
            mk(Flavor::Word, "w-good", 0.1),
            mk(Flavor::Word, "w-bad", 0.9),
            mk(Flavor::Surface, "s", 0.1),
            mk(Flavor::Synset, "y", 0.1),
            mk(Flavor::Brown, "b", 0.1),
        ];
        let combos = select_combinations(&mentions, &options, 10).unwrap();
        assert_eq!(combos.len(), 2);
        assert!(combos[0].penalty <= combos[1].penalty);
        assert_eq!(combos[0].choices[&Flavor::Word], "w-good");
        assert_eq!(combos[0].penalty, 0.0);
        assert!((combos[1].penalty - 0.5).abs() < 1e-12);
        let top1 = select_combinations(&mentions, &options, 1).unwrap();
        assert_eq!(top1.len(), 1);
    }

    #[test]
    fn combinations_require_all_four_flavors() {
        let mentions = vec![mention("g", &["g"])];
        let options = vec![option(Flavor::Word, "w", vec![vec![("g", 1.0)]])];
        assert!(select_combinations(&mentions, &options, 10).is_err());
    }

    #[test]
    fn entity_flavor_rejected_in_combos() {
        let mentions = vec![mention("g", &["g"])];
        let options = vec![option(Flavor::Entity, "e", vec![vec![("g", 1.0)]])];
        assert!(select_combinations(&mentions, &options, 10).is_err());
    }
}
