//! Ranking features. Every candidate of a mention is rendered as a fixed
//! vector: local properties (edit distance, popularity, type codes, typing
//! probabilities), mention-level comparisons against the other candidates,
//! the document-level typing maximum, and in the second stage the ranking
//! feedback features.

use crate::artifact::{ArtifactReader, ArtifactWriter};
use crate::candgen::{levenshtein, Candidate};
use crate::clustering::{Clustering, Flavor};
use crate::corpus::{derive_main_title, CoarseType, KnowledgeBase, SurfaceFormStore};
use crate::embeddings::{cosine, EmbeddingTable};
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

pub const SF_TYPE_COUNT: usize = 11;
pub const ENTITY_TYPE_COUNT: usize = 5;

/// Surface form types, in feature slot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfType {
    WikiId = 0,
    Redirect = 1,
    Disambiguation = 2,
    FirstName = 3,
    Surname = 4,
    FirstWord = 5,
    LastWord = 6,
    PrefixPhrase = 7,
    SuffixPhrase = 8,
    BeforeComma = 9,
    OrgAcronym = 10,
}

pub const SF_TYPE_NAMES: [&str; SF_TYPE_COUNT] = [
    "wiki_id",
    "redirect",
    "disambiguation",
    "first_name",
    "surname",
    "first_word",
    "last_word",
    "prefix_phrase",
    "suffix_phrase",
    "before_comma",
    "org_acronym",
];

/// Name lists used to recognize person-name surface forms. Entries are
/// stored lowercased.
#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    pub first_names: HashSet<String>,
    pub surnames: HashSet<String>,
}

impl Lexicons {
    pub fn load(first_names: &Path, surnames: &Path) -> Result<Lexicons> {
        Ok(Lexicons {
            first_names: load_lexicon(first_names)?,
            surnames: load_lexicon(surnames)?,
        })
    }
}

fn load_lexicon(path: &Path) -> Result<HashSet<String>> {
    let mut reader = ArtifactReader::open(path, "lexicon", false)?;
    let mut set = HashSet::new();
    while let Some((_, line)) = reader.next_line()? {
        let name = line.trim();
        if !name.is_empty() {
            set.insert(name.to_lowercase());
        }
    }
    Ok(set)
}

/// Multi-hot surface form type vector for a candidate's best surface form.
/// All string comparisons against the main title are case-insensitive.
pub fn surface_form_types(
    entity_id: &str,
    coarse: CoarseType,
    best_sf: &str,
    store: &SurfaceFormStore,
    lexicons: &Lexicons,
) -> [f64; SF_TYPE_COUNT] {
    let mut out = [0.0; SF_TYPE_COUNT];
    let mut set = |t: SfType| out[t as usize] = 1.0;
    let title = derive_main_title(entity_id);
    let sf = best_sf.to_lowercase();
    let title_lower = title.to_lowercase();
    if sf == title_lower {
        set(SfType::WikiId);
    }
    if let Some(rec) = store.by_entity(entity_id).find(|r| r.surface == best_sf) {
        if rec.flags.redirect {
            set(SfType::Redirect);
        }
        if rec.flags.disambiguation {
            set(SfType::Disambiguation);
        }
    }
    if coarse == CoarseType::Person {
        if lexicons.first_names.contains(&sf) {
            set(SfType::FirstName);
        }
        if lexicons.surnames.contains(&sf) {
            set(SfType::Surname);
        }
    }
    let title_words: Vec<&str> = title_lower.split_whitespace().collect();
    let sf_words: Vec<&str> = sf.split_whitespace().collect();
    if let (Some(first), Some(last)) = (title_words.first(), title_words.last()) {
        if sf_words.len() == 1 {
            if sf_words[0] == *first {
                set(SfType::FirstWord);
            }
            if sf_words[0] == *last {
                set(SfType::LastWord);
            }
        }
    }
    // Prefix/suffix phrases: at least two words, a proper subset of the
    // title, aligned on word boundaries.
    if sf_words.len() >= 2 && sf_words.len() < title_words.len() {
        if title_words[..sf_words.len()] == sf_words[..] {
            set(SfType::PrefixPhrase);
        }
        if title_words[title_words.len() - sf_words.len()..] == sf_words[..] {
            set(SfType::SuffixPhrase);
        }
    }
    if let Some((before, _)) = title_lower.split_once(',') {
        if sf == before.trim() {
            set(SfType::BeforeComma);
        }
    }
    if title_words.len() >= 2 {
        let acronym: String = title_words
            .iter()
            .filter_map(|w| w.chars().next())
            .collect();
        let compact: String = sf.chars().filter(|c| *c != '.').collect();
        if !compact.is_empty() && compact == acronym {
            set(SfType::OrgAcronym);
        }
    }
    out
}

/// One-hot coarse entity type; entities missing from the KB count as Misc.
pub fn entity_type_vector(entity_id: &str, kb: &KnowledgeBase) -> [f64; ENTITY_TYPE_COUNT] {
    let mut out = [0.0; ENTITY_TYPE_COUNT];
    let coarse = kb
        .get(entity_id)
        .map(|e| e.coarse_type)
        .unwrap_or(CoarseType::Misc);
    out[coarse.slot()] = 1.0;
    out
}

/// The max-diff transform: every value is replaced by its distance to the
/// maximum; the maximum itself is compared against the second-best value.
/// A single value maps to zero.
pub fn max_diff(values: &[f64]) -> Vec<f64> {
    if values.len() <= 1 {
        return vec![0.0; values.len()];
    }
    let mut imax = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[imax] {
            imax = i;
        }
    }
    let max = values[imax];
    let secmax = values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != imax)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == imax { max - secmax } else { max - v })
        .collect()
}

/// Typing predictions of one flavor for every mention of a document.
pub struct FlavorTyping<'a> {
    pub flavor: Flavor,
    pub clustering: &'a Clustering,
    /// One distribution per mention over this flavor's clusters.
    pub probs: &'a [Vec<f64>],
}

impl FlavorTyping<'_> {
    /// P of the candidate's cluster at the given mention; zero when the
    /// entity is unclustered.
    fn candidate_prob(&self, mention: usize, entity: &str) -> f64 {
        match self.clustering.cluster(entity) {
            Some(cluster) => self.probs[mention][cluster as usize],
            None => 0.0,
        }
    }
}

/// Everything stage-1 features need for one document.
pub struct FeatureInputs<'a> {
    pub kb: &'a KnowledgeBase,
    pub store: &'a SurfaceFormStore,
    pub lexicons: &'a Lexicons,
    /// Unit vectors of candidate entity reference documents; entities
    /// without one get document similarity zero.
    pub entity_doc_vectors: &'a BTreeMap<String, Vec<f64>>,
    /// Unit vector of the test document.
    pub test_doc_vector: &'a [f64],
    /// Typing predictions in pinned flavor order.
    pub flavors: &'a [FlavorTyping<'a>],
}

/// Stage-2 extras: first-stage ranking probabilities and the entity
/// embedding space for context similarity.
pub struct SecondStageInputs<'a> {
    /// Per mention, per candidate, aligned with the candidate lists.
    pub rank_probs: &'a [Vec<f64>],
    pub entity_embeddings: &'a EmbeddingTable,
    /// Mentions considered on each side of the current one.
    pub window: usize,
    /// Highest ranked candidates taken per surrounding mention.
    pub top: usize,
}

pub const SECOND_STAGE_WINDOW: usize = 5;
pub const SECOND_STAGE_TOP: usize = 3;

pub fn stage1_dim() -> usize {
    21 + 3 * Flavor::COMBO.len()
}

pub fn stage2_dim() -> usize {
    21 + 3 * Flavor::ALL.len() + 2
}

fn flavor_names(flavors: &[FlavorTyping]) -> Vec<&'static str> {
    flavors.iter().map(|f| f.flavor.as_str()).collect()
}

fn check_flavors(flavors: &[FlavorTyping], expected: &[Flavor], mentions: usize) -> Result<()> {
    let got: Vec<Flavor> = flavors.iter().map(|f| f.flavor).collect();
    if got != expected {
        return Err(Error::invalid(format!(
            "typing flavors must be [{}], got [{}]",
            expected
                .iter()
                .map(|f| f.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            got.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    for f in flavors {
        if f.probs.len() != mentions {
            return Err(Error::invalid(format!(
                "{} typing has {} mention distributions, document has {} mentions",
                f.flavor,
                f.probs.len(),
                mentions
            )));
        }
    }
    Ok(())
}

/// Feature column names, stage-1 layout.
pub fn stage1_columns() -> Vec<String> {
    columns_for(&Flavor::COMBO, false)
}

/// Feature column names, stage-2 layout.
pub fn stage2_columns() -> Vec<String> {
    columns_for(&Flavor::ALL, true)
}

fn columns_for(flavors: &[Flavor], second_stage: bool) -> Vec<String> {
    let mut cols = vec!["edit_distance".to_string(), "ln_entity_freq".to_string()];
    for name in SF_TYPE_NAMES {
        cols.push(format!("sf_type_{name}"));
    }
    for t in CoarseType::ALL {
        cols.push(format!("entity_type_{}", t.as_str().to_lowercase()));
    }
    for f in flavors {
        cols.push(format!("typing_prob_{}", f.as_str().to_lowercase()));
    }
    cols.push("avg_edit_distance".to_string());
    cols.push("max_diff_ln_sf_freq".to_string());
    cols.push("max_diff_doc_similarity".to_string());
    for f in flavors {
        cols.push(format!("max_diff_typing_{}", f.as_str().to_lowercase()));
    }
    for f in flavors {
        cols.push(format!("max_typing_in_doc_{}", f.as_str().to_lowercase()));
    }
    if second_stage {
        cols.push("max_ranking_score".to_string());
        cols.push("max_cos_sim_in_context".to_string());
    }
    cols
}

/// The shared (stage-independent) part of the feature computation.
fn base_features(
    surfaces: &[&str],
    candidates: &[Vec<Candidate>],
    inputs: &FeatureInputs,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if surfaces.len() != candidates.len() {
        return Err(Error::invalid("surfaces and candidate lists differ in length"));
    }
    // Document-level support: mentions carrying each entity.
    let mut entity_mentions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (m, cands) in candidates.iter().enumerate() {
        for c in cands {
            entity_mentions.entry(c.entity_id.as_str()).or_default().push(m);
        }
    }
    let mut out = Vec::with_capacity(candidates.len());
    for (m, cands) in candidates.iter().enumerate() {
        let surface = surfaces[m].to_lowercase();
        let edits: Vec<f64> = cands
            .iter()
            .map(|c| levenshtein(&surface, &c.best_sf.to_lowercase()) as f64)
            .collect();
        let avg_edit = if edits.is_empty() {
            0.0
        } else {
            edits.iter().sum::<f64>() / edits.len() as f64
        };
        let sf_freqs: Vec<f64> = cands
            .iter()
            .map(|c| {
                (inputs.store.record_frequency(&c.entity_id, &c.best_sf).max(1) as f64).ln()
            })
            .collect();
        let doc_sims: Vec<f64> = cands
            .iter()
            .map(|c| {
                inputs
                    .entity_doc_vectors
                    .get(&c.entity_id)
                    .map_or(0.0, |v| cosine(v, inputs.test_doc_vector))
            })
            .collect();
        let typing: Vec<Vec<f64>> = inputs
            .flavors
            .iter()
            .map(|f| {
                cands
                    .iter()
                    .map(|c| f.candidate_prob(m, &c.entity_id))
                    .collect()
            })
            .collect();
        let md_sf_freq = max_diff(&sf_freqs);
        let md_doc_sim = max_diff(&doc_sims);
        let md_typing: Vec<Vec<f64>> = typing.iter().map(|v| max_diff(v)).collect();

        let mut per_candidate = Vec::with_capacity(cands.len());
        for (i, c) in cands.iter().enumerate() {
            let coarse = inputs
                .kb
                .get(&c.entity_id)
                .map(|e| e.coarse_type)
                .unwrap_or(CoarseType::Misc);
            let mut v = Vec::with_capacity(stage2_dim());
            v.push(edits[i]);
            v.push((inputs.store.entity_total(&c.entity_id).max(1) as f64).ln());
            v.extend(surface_form_types(
                &c.entity_id,
                coarse,
                &c.best_sf,
                inputs.store,
                inputs.lexicons,
            ));
            v.extend(entity_type_vector(&c.entity_id, inputs.kb));
            for t in &typing {
                v.push(t[i]);
            }
            v.push(avg_edit);
            v.push(md_sf_freq[i]);
            v.push(md_doc_sim[i]);
            for t in &md_typing {
                v.push(t[i]);
            }
            for f in inputs.flavors {
                let best = entity_mentions[c.entity_id.as_str()]
                    .iter()
                    .map(|&m2| f.candidate_prob(m2, &c.entity_id))
                    .fold(f64::NEG_INFINITY, f64::max);
                v.push(best);
            }
            per_candidate.push(v);
        }
        out.push(per_candidate);
    }
    Ok(out)
}

/// Stage-1 feature vectors for one document, aligned with the candidate
/// lists. Typing flavors must be exactly the four combination flavors.
pub fn stage1_features(
    surfaces: &[&str],
    candidates: &[Vec<Candidate>],
    inputs: &FeatureInputs,
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_flavors(inputs.flavors, &Flavor::COMBO, candidates.len())?;
    let out = base_features(surfaces, candidates, inputs)?;
    debug_assert!(out.iter().flatten().all(|v| v.len() == stage1_dim()));
    Ok(out)
}

/// Stage-2 feature vectors: the base layout over all five flavors plus the
/// ranking feedback features.
pub fn stage2_features(
    surfaces: &[&str],
    candidates: &[Vec<Candidate>],
    inputs: &FeatureInputs,
    second: &SecondStageInputs,
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_flavors(inputs.flavors, &Flavor::ALL, candidates.len())?;
    if second.rank_probs.len() != candidates.len() {
        return Err(Error::invalid("ranking probabilities do not cover all mentions"));
    }
    for (m, (cands, probs)) in candidates.iter().zip(second.rank_probs).enumerate() {
        if cands.len() != probs.len() {
            return Err(Error::invalid(format!(
                "mention {m}: {} candidates but {} ranking probabilities",
                cands.len(),
                probs.len()
            )));
        }
    }
    let entity_flavor = inputs
        .flavors
        .iter()
        .find(|f| f.flavor == Flavor::Entity)
        .expect("checked above");

    // Occurrences of each entity across the document's candidate lists.
    let mut entity_mentions: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
    for (m, cands) in candidates.iter().enumerate() {
        for (i, c) in cands.iter().enumerate() {
            entity_mentions
                .entry(c.entity_id.as_str())
                .or_default()
                .push((m, i));
        }
    }
    // Top ranked candidates per mention, for the context similarity.
    let top_ranked: Vec<Vec<usize>> = second
        .rank_probs
        .iter()
        .enumerate()
        .map(|(m, probs)| {
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| {
                probs[b]
                    .partial_cmp(&probs[a])
                    .expect("probabilities are finite")
                    .then_with(|| candidates[m][a].entity_id.cmp(&candidates[m][b].entity_id))
            });
            order.truncate(second.top);
            order
        })
        .collect();

    let mut out = base_features(surfaces, candidates, inputs)?;
    for (m, cands) in candidates.iter().enumerate() {
        for (i, c) in cands.iter().enumerate() {
            let occurrences = &entity_mentions[c.entity_id.as_str()];
            // Highest first-stage score among previous occurrences, else
            // among full-title future occurrences, else zero.
            let prev_best = occurrences
                .iter()
                .filter(|(m2, _)| *m2 < m)
                .map(|&(m2, i2)| second.rank_probs[m2][i2])
                .fold(f64::NEG_INFINITY, f64::max);
            let max_ranking = if prev_best.is_finite() {
                prev_best
            } else {
                let title = derive_main_title(&c.entity_id).to_lowercase();
                let next_best = occurrences
                    .iter()
                    .filter(|(m2, _)| *m2 > m)
                    .filter(|&&(m2, i2)| {
                        candidates[m2][i2].best_sf.to_lowercase() == title
                    })
                    .map(|&(m2, i2)| second.rank_probs[m2][i2])
                    .fold(f64::NEG_INFINITY, f64::max);
                if next_best.is_finite() {
                    next_best
                } else {
                    0.0
                }
            };

            let own_vec = second.entity_embeddings.get(&c.entity_id);
            let mut max_cos = 0.0;
            if let Some(own) = own_vec {
                let lo = m.saturating_sub(second.window);
                let hi = (m + second.window).min(candidates.len() - 1);
                for m2 in lo..=hi {
                    if m2 == m {
                        continue;
                    }
                    for &i2 in &top_ranked[m2] {
                        let other = &candidates[m2][i2];
                        let Some(other_vec) = second.entity_embeddings.get(&other.entity_id)
                        else {
                            continue;
                        };
                        let p = entity_flavor.candidate_prob(m2, &other.entity_id);
                        let val = cosine(own, other_vec) * p;
                        if val > max_cos {
                            max_cos = val;
                        }
                    }
                }
            }
            out[m][i].push(max_ranking);
            out[m][i].push(max_cos);
        }
    }
    debug_assert!(out.iter().flatten().all(|v| v.len() == stage2_dim()));
    Ok(out)
}

/// TSV dump with a named column header:
/// `#stage <n>`, `#columns doc_id mention_index entity_id <feature names>`,
/// then one row per candidate with values at six decimals.
pub fn write_features(
    rows: &[(String, usize, String, Vec<f64>)],
    stage: u8,
    path: &Path,
) -> Result<()> {
    let columns = match stage {
        1 => stage1_columns(),
        2 => stage2_columns(),
        _ => return Err(Error::invalid("stage must be 1 or 2")),
    };
    let mut w = ArtifactWriter::create(path, "features")?;
    w.line(format_args!("#stage {stage}"))?;
    w.line(format_args!(
        "#columns doc_id mention_index entity_id {}",
        columns.join(" ")
    ))?;
    for (doc_id, mention, entity, values) in rows {
        if values.len() != columns.len() {
            return Err(Error::invalid(format!(
                "feature row for `{entity}` has {} values, expected {}",
                values.len(),
                columns.len()
            )));
        }
        let mut line = format!("{doc_id}\t{mention}\t{entity}");
        for v in values {
            line.push('\t');
            line.push_str(&format!("{v:.6}"));
        }
        w.line(&line)?;
    }
    w.finish()
}

#[allow(clippy::type_complexity)]
pub fn read_features(path: &Path) -> Result<(u8, Vec<(String, usize, String, Vec<f64>)>)> {
    let mut r = ArtifactReader::open(path, "features", true)?;
    let (no, line) = r.next_line()?.ok_or_else(|| r.err(0, "missing stage line"))?;
    let stage: u8 = line
        .strip_prefix("#stage ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| r.err(no, "expected `#stage <n>`"))?;
    let expected = match stage {
        1 => stage1_dim(),
        2 => stage2_dim(),
        _ => return Err(r.err(no, format!("stage must be 1 or 2, found {stage}"))),
    };
    let (no, line) = r.next_line()?.ok_or_else(|| r.err(0, "missing column header"))?;
    if !line.starts_with("#columns ") {
        return Err(r.err(no, "expected `#columns ...`"));
    }
    let mut rows = Vec::new();
    while let Some((no, line)) = r.next_line()? {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 + expected {
            return Err(r.err(
                no,
                format!("expected {} columns, found {}", 3 + expected, cols.len()),
            ));
        }
        let mention: usize = cols[1]
            .parse()
            .map_err(|_| r.err(no, format!("bad mention index `{}`", cols[1])))?;
        let values: Vec<f64> = cols[3..]
            .iter()
            .map(|v| {
                v.parse()
                    .map_err(|_| r.err(no, format!("bad feature value `{v}`")))
            })
            .collect::<Result<_>>()?;
        rows.push((cols[0].to_string(), mention, cols[2].to_string(), values));
    }
    Ok((stage, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candgen::CandidateSource;
    use crate::corpus::test_util::temp_file;
    use crate::corpus::{parse_kb, parse_type_mapping, SfFlags};

    fn kb_with_types() -> KnowledgeBase {
        let mapping = parse_type_mapping(&temp_file(
            "tm",
            "person_synset\tPerson\norg_synset\tOrganization\nloc_synset\tLocation\n",
        ))
        .unwrap();
        parse_kb(
            &temp_file(
                "kb",
                "John_Smith\tperson_synset\t10\n\
                 United_Nations\torg_synset\t20\n\
                 Springfield,_Illinois\tloc_synset\t5\n\
                 New_York_City\tloc_synset\t30\n",
            ),
            &mapping,
        )
        .unwrap()
    }

    fn lexicons() -> Lexicons {
        Lexicons {
            first_names: ["john".to_string()].into(),
            surnames: ["smith".to_string()].into(),
        }
    }

    fn flags_of(types: [f64; SF_TYPE_COUNT]) -> Vec<&'static str> {
        SF_TYPE_NAMES
            .iter()
            .zip(types)
            .filter(|(_, v)| *v == 1.0)
            .map(|(n, _)| *n)
            .collect()
    }

    #[test]
    fn surface_form_type_rules() {
        let kb = kb_with_types();
        let store = SurfaceFormStore::new();
        let lex = lexicons();
        let coarse = |id: &str| kb.get(id).unwrap().coarse_type;

        // Full main title.
        let t = surface_form_types("John_Smith", coarse("John_Smith"), "John Smith", &store, &lex);
        assert_eq!(flags_of(t), vec!["wiki_id"]);
        // Case-insensitive.
        let t = surface_form_types("John_Smith", coarse("John_Smith"), "JOHN SMITH", &store, &lex);
        assert_eq!(flags_of(t), vec!["wiki_id"]);
        // Person first/last names combine with positional types.
        let t = surface_form_types("John_Smith", coarse("John_Smith"), "John", &store, &lex);
        assert_eq!(flags_of(t), vec!["first_name", "first_word"]);
        let t = surface_form_types("John_Smith", coarse("John_Smith"), "Smith", &store, &lex);
        assert_eq!(flags_of(t), vec!["surname", "last_word"]);
        // Non-person entities never get name types.
        let t = surface_form_types("United_Nations", coarse("United_Nations"), "United", &store, &lex);
        assert_eq!(flags_of(t), vec!["first_word"]);
        // Prefix/suffix phrases need at least two words.
        let t = surface_form_types("New_York_City", coarse("New_York_City"), "New York", &store, &lex);
        assert_eq!(flags_of(t), vec!["prefix_phrase"]);
        let t = surface_form_types("New_York_City", coarse("New_York_City"), "York City", &store, &lex);
        assert_eq!(flags_of(t), vec!["suffix_phrase"]);
        // Before-comma phrase.
        let t = surface_form_types(
            "Springfield,_Illinois",
            coarse("Springfield,_Illinois"),
            "Springfield",
            &store,
            &lex,
        );
        assert!(flags_of(t).contains(&"before_comma"));
        // Acronym with optional dots.
        let t = surface_form_types("United_Nations", coarse("United_Nations"), "UN", &store, &lex);
        assert_eq!(flags_of(t), vec!["org_acronym"]);
        let t = surface_form_types("United_Nations", coarse("United_Nations"), "U.N.", &store, &lex);
        assert_eq!(flags_of(t), vec!["org_acronym"]);
    }

    #[test]
    fn redirect_and_disambiguation_come_from_store_flags() {
        let kb = kb_with_types();
        let mut store = SurfaceFormStore::new();
        store.add(
            "John_Smith",
            "Smithy",
            3,
            SfFlags { redirect: true, disambiguation: true },
        );
        let t = surface_form_types(
            "John_Smith",
            kb.get("John_Smith").unwrap().coarse_type,
            "Smithy",
            &store,
            &lexicons(),
        );
        assert_eq!(flags_of(t), vec!["redirect", "disambiguation"]);
    }

    #[test]
    fn max_diff_cases() {
        assert_eq!(max_diff(&[]), Vec::<f64>::new());
        assert_eq!(max_diff(&[3.0]), vec![0.0]);
        // Two candidates both see the gap.
        assert_eq!(max_diff(&[3.0, 7.0]), vec![4.0, 4.0]);
        // The maximum compares to the runner-up, everyone else to the max.
        assert_eq!(max_diff(&[1.0, 5.0, 4.0]), vec![4.0, 1.0, 1.0]);
        // Tied maxima: the first one is treated as the max.
        assert_eq!(max_diff(&[5.0, 5.0, 2.0]), vec![0.0, 0.0, 3.0]);
    }

    fn mk_candidate(entity: &str, best_sf: &str) -> Candidate {
        Candidate {
            entity_id: entity.to_string(),
            best_sf: best_sf.to_string(),
            source: CandidateSource::Direct,
            score: 0.0,
        }
    }

    struct Fixture {
        kb: KnowledgeBase,
        store: SurfaceFormStore,
        lexicons: Lexicons,
        doc_vectors: BTreeMap<String, Vec<f64>>,
        clusterings: Vec<Clustering>,
    }

    impl Fixture {
        fn new() -> Fixture {
            let kb = kb_with_types();
            let mut store = SurfaceFormStore::new();
            store.add("John_Smith", "John Smith", 7, SfFlags::default());
            store.add("John_Smith", "Smith", 3, SfFlags::default());
            store.add("United_Nations", "UN", 20, SfFlags::default());
            let mut doc_vectors = BTreeMap::new();
            doc_vectors.insert("John_Smith".to_string(), vec![1.0, 0.0]);
            doc_vectors.insert("United_Nations".to_string(), vec![0.0, 1.0]);
            let mut clusterings = Vec::new();
            for (i, f) in Flavor::ALL.iter().enumerate() {
                let mut c = Clustering::new(*f, 2);
                c.insert("John_Smith", (i % 2) as u32).unwrap();
                c.insert("United_Nations", ((i + 1) % 2) as u32).unwrap();
                clusterings.push(c);
            }
            Fixture { kb, store, lexicons: lexicons(), doc_vectors, clusterings }
        }

        fn flavor_typing<'a>(&'a self, probs: &'a [Vec<Vec<f64>>]) -> Vec<FlavorTyping<'a>> {
            Flavor::ALL
                .iter()
                .zip(&self.clusterings)
                .zip(probs)
                .map(|((f, c), p)| FlavorTyping { flavor: *f, clustering: c, probs: p })
                .collect()
        }
    }

    #[test]
    fn stage1_layout_and_values() {
        let fx = Fixture::new();
        let surfaces = vec!["Smith", "UN"];
        let candidates = vec![
            vec![mk_candidate("John_Smith", "Smith"), mk_candidate("United_Nations", "UN")],
            vec![mk_candidate("United_Nations", "UN")],
        ];
        // Uniform typing distributions except the Word flavor.
        let probs: Vec<Vec<Vec<f64>>> = Flavor::ALL
            .iter()
            .map(|f| match f {
                Flavor::Word => vec![vec![0.9, 0.1], vec![0.3, 0.7]],
                _ => vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            })
            .collect();
        let typing = fx.flavor_typing(&probs[..4]);
        let inputs = FeatureInputs {
            kb: &fx.kb,
            store: &fx.store,
            lexicons: &fx.lexicons,
            entity_doc_vectors: &fx.doc_vectors,
            test_doc_vector: &[1.0, 0.0],
            flavors: &typing,
        };
        let features = stage1_features(
            &surfaces.iter().map(|s| *s).collect::<Vec<_>>(),
            &candidates,
            &inputs,
        )
        .unwrap();
        assert_eq!(features.len(), 2);
        assert_eq!(features[0].len(), 2);
        let v = &features[0][0]; // John_Smith for "Smith"
        assert_eq!(v.len(), stage1_dim());
        assert_eq!(v[0], 0.0); // exact surface match
        assert!((v[1] - (10.0f64).ln()).abs() < 1e-12); // entity total 7+3
        // sf types: surname + last_word set.
        assert_eq!(v[2 + SfType::Surname as usize], 1.0);
        assert_eq!(v[2 + SfType::LastWord as usize], 1.0);
        assert_eq!(v[2 + SfType::WikiId as usize], 0.0);
        // entity type one-hot: Person in slot 0.
        assert_eq!(v[13], 1.0);
        assert_eq!(v[13..18].iter().sum::<f64>(), 1.0);
        // Word typing prob: John_Smith is in cluster 0 -> 0.9.
        assert!((v[18] - 0.9).abs() < 1e-12);
        // avg edit: candidate edits are 0 ("Smith") and 2 ("UN").
        let avg = v[22];
        assert!((avg - 1.0).abs() < 1e-12);
        // max-diff doc similarity: John_Smith has cos 1, UN 0; max holder
        // compares to runner-up.
        assert!((v[24] - 1.0).abs() < 1e-12);
        let v2 = &features[0][1];
        assert!((v2[24] - 1.0).abs() < 1e-12);
        // max typing in doc for Word: UN appears at both mentions with
        // cluster-1 probs 0.1 and 0.7.
        assert!((v2[29] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn stage1_rejects_wrong_flavor_set() {
        let fx = Fixture::new();
        let probs: Vec<Vec<Vec<f64>>> = (0..5).map(|_| vec![vec![0.5, 0.5]]).collect();
        let typing = fx.flavor_typing(&probs); // five flavors, not four
        let inputs = FeatureInputs {
            kb: &fx.kb,
            store: &fx.store,
            lexicons: &fx.lexicons,
            entity_doc_vectors: &fx.doc_vectors,
            test_doc_vector: &[1.0, 0.0],
            flavors: &typing,
        };
        let err = stage1_features(&["x"], &[vec![]], &inputs).unwrap_err();
        assert!(err.to_string().contains("flavors"));
    }

    #[test]
    fn stage2_ranking_feedback() {
        let fx = Fixture::new();
        // Three mentions of the same entity; the middle one also offers an
        // alternative candidate.
        let surfaces = vec!["John Smith", "Smith", "Smith"];
        let candidates = vec![
            vec![mk_candidate("John_Smith", "John Smith")],
            vec![mk_candidate("John_Smith", "Smith"), mk_candidate("United_Nations", "UN")],
            vec![mk_candidate("John_Smith", "Smith")],
        ];
        let probs: Vec<Vec<Vec<f64>>> = Flavor::ALL
            .iter()
            .map(|_| vec![vec![0.5, 0.5]; 3])
            .collect();
        let typing = fx.flavor_typing(&probs);
        let inputs = FeatureInputs {
            kb: &fx.kb,
            store: &fx.store,
            lexicons: &fx.lexicons,
            entity_doc_vectors: &fx.doc_vectors,
            test_doc_vector: &[1.0, 0.0],
            flavors: &typing,
        };
        let rank_probs = vec![vec![0.8], vec![0.6, 0.4], vec![0.9]];
        let table = EmbeddingTable::from_rows(
            vec!["John_Smith".to_string(), "United_Nations".to_string()],
            2,
            vec![1.0, 0.0, 0.8, 0.6],
        )
        .unwrap();
        let second = SecondStageInputs {
            rank_probs: &rank_probs,
            entity_embeddings: &table,
            window: SECOND_STAGE_WINDOW,
            top: SECOND_STAGE_TOP,
        };
        let surfaces_ref: Vec<&str> = surfaces.iter().map(|s| *s).collect();
        let features = stage2_features(&surfaces_ref, &candidates, &inputs, &second).unwrap();
        let dim = stage2_dim();
        assert!(features.iter().flatten().all(|v| v.len() == dim));
        // Mention 0 has no previous occurrence; the future occurrences of
        // John_Smith use surface "Smith", not the full title, so the
        // fallback yields zero.
        assert_eq!(features[0][0][dim - 2], 0.0);
        // Mention 1 sees the previous score 0.8; mention 2 the max(0.8, 0.6).
        assert_eq!(features[1][0][dim - 2], 0.8);
        assert_eq!(features[2][0][dim - 2], 0.8);
        // Context similarity: for UN at mention 1, the top candidate of the
        // neighbours is John_Smith with cos 0.8 times Entity typing 0.5.
        let un = &features[1][1];
        assert!((un[dim - 1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn stage2_wiki_id_fallback_applies() {
        let fx = Fixture::new();
        let surfaces = vec!["Smith", "John Smith"];
        let candidates = vec![
            vec![mk_candidate("John_Smith", "Smith")],
            vec![mk_candidate("John_Smith", "John Smith")],
        ];
        let probs: Vec<Vec<Vec<f64>>> = Flavor::ALL
            .iter()
            .map(|_| vec![vec![0.5, 0.5]; 2])
            .collect();
        let typing = fx.flavor_typing(&probs);
        let inputs = FeatureInputs {
            kb: &fx.kb,
            store: &fx.store,
            lexicons: &fx.lexicons,
            entity_doc_vectors: &fx.doc_vectors,
            test_doc_vector: &[1.0, 0.0],
            flavors: &typing,
        };
        let rank_probs = vec![vec![0.3], vec![0.7]];
        let table = EmbeddingTable::from_rows(vec!["John_Smith".to_string()], 1, vec![1.0]).unwrap();
        let second = SecondStageInputs {
            rank_probs: &rank_probs,
            entity_embeddings: &table,
            window: 5,
            top: 3,
        };
        let features = stage2_features(&["Smith", "John Smith"], &candidates, &inputs, &second).unwrap();
        let dim = stage2_dim();
        // The first mention has no previous occurrence, but the future one
        // is mentioned under the full title, so its score carries back.
        assert_eq!(features[0][0][dim - 2], 0.7);
    }

    #[test]
    fn features_file_roundtrip() {
        let rows = vec![
            (
                "doc1".to_string(),
                0usize,
                "E1".to_string(),
                (0..stage1_dim()).map(|i| i as f64 / 7.0).collect::<Vec<f64>>(),
            ),
        ];
        let dir = std::env::temp_dir().join(format!("nedkit-feat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("features.tsv");
        write_features(&rows, 1, &path).unwrap();
        let (stage, back) = read_features(&path).unwrap();
        assert_eq!(stage, 1);
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, "doc1");
        assert_eq!(back[0].3.len(), stage1_dim());
        // Values survive at six decimals.
        assert!((back[0].3[5] - rows[0].3[5]).abs() < 5e-7);
        // Dimension mismatches are rejected.
        let bad = vec![("d".to_string(), 0usize, "E".to_string(), vec![1.0])];
        assert!(write_features(&bad, 1, &dir.join("bad.tsv")).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn column_names_match_dims() {
        assert_eq!(stage1_columns().len(), stage1_dim());
        assert_eq!(stage2_columns().len(), stage2_dim());
        assert_eq!(stage1_dim(), 33);
        assert_eq!(stage2_dim(), 38);
    }
}
