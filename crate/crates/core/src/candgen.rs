//! Candidate generation: fuzzy lookup of plausible entities for a mention
//! surface via a character trigram index, followed by a document-level
//! expansion using containment between mention surfaces and entity
//! cooccurrence statistics.

use crate::artifact::{ArtifactReader, ArtifactWriter};
use crate::corpus::{Document, SurfaceFormStore};
use crate::error::{Error, Result};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

/// Character-level edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn jaro_similarity(a: &[char], b: &[char]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut b_taken = vec![false; b.len()];
    let mut a_matched = vec![false; a.len()];
    let mut matches = 0usize;
    for (i, &ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_taken[j] && b[j] == ca {
                b_taken[j] = true;
                a_matched[i] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    // Transpositions: matched characters out of order, counted pairwise.
    let mut transpositions = 0usize;
    let mut j = 0usize;
    for (i, &ca) in a.iter().enumerate() {
        if !a_matched[i] {
            continue;
        }
        while !b_taken[j] {
            j += 1;
        }
        if ca != b[j] {
            transpositions += 1;
        }
        j += 1;
    }
    let m = matches as f64;
    let t = (transpositions / 2) as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

/// Jaro-Winkler similarity with the standard prefix bonus (scale 0.1, at
/// most 4 characters).
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let ac: Vec<char> = a.chars().collect();
    let bc: Vec<char> = b.chars().collect();
    let jaro = jaro_similarity(&ac, &bc);
    let prefix = ac
        .iter()
        .zip(&bc)
        .take(4)
        .take_while(|(x, y)| x == y)
        .count();
    jaro + prefix as f64 * 0.1 * (1.0 - jaro)
}

pub fn jaro_winkler_distance(a: &str, b: &str) -> f64 {
    1.0 - jaro_winkler(a, b)
}

/// A character trigram; 0 marks the string boundary.
pub type Trigram = (u32, u32, u32);

/// Distinct trigrams of the lowercased string, padded with one boundary
/// marker on each side. A string of n >= 1 characters yields n trigrams.
pub fn trigrams(s: &str) -> HashSet<Trigram> {
    let chars: Vec<u32> = std::iter::once(0)
        .chain(s.to_lowercase().chars().map(|c| c as u32))
        .chain(std::iter::once(0))
        .collect();
    chars.windows(3).map(|w| (w[0], w[1], w[2])).collect()
}

/// Fraction of the query's trigrams found in the surface.
pub fn trigram_overlap(query: &str, surface: &str) -> f64 {
    let q = trigrams(query);
    if q.is_empty() {
        return 0.0;
    }
    let s = trigrams(surface);
    q.intersection(&s).count() as f64 / q.len() as f64
}

fn lower_words(s: &str) -> HashSet<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// Number of distinct surface words that do not appear in the query.
pub fn word_diff(surface: &str, query: &str) -> usize {
    let sw = lower_words(surface);
    let qw = lower_words(query);
    sw.difference(&qw).count()
}

#[derive(Debug, Clone)]
pub struct CandidateConfig {
    /// Minimum trigram overlap with the query for a surface to be considered.
    pub trigram_threshold: f64,
    /// Edit distance allowance as a fraction of the query length.
    pub edit_factor: f64,
    /// Word-overlap branch: the surface needs at least this many words ...
    pub min_surface_words: usize,
    /// ... and at most this many words absent from the query.
    pub max_word_diff: usize,
    /// Cooccurring entities considered per candidate during expansion.
    pub coocc_top: usize,
    /// Final candidates kept per mention.
    pub max_candidates: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            trigram_threshold: 0.60,
            edit_factor: 0.25,
            min_surface_words: 2,
            max_word_diff: 1,
            coocc_top: 20,
            max_candidates: 100,
        }
    }
}

impl CandidateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.trigram_threshold > 0.0 && self.trigram_threshold <= 1.0) {
            // A zero threshold would admit surfaces sharing no trigram with
            // the query, which the index cannot retrieve.
            return Err(Error::invalid("trigram threshold must be in (0, 1]"));
        }
        if self.edit_factor < 0.0 {
            return Err(Error::invalid("edit factor must be nonnegative"));
        }
        if self.max_candidates == 0 {
            return Err(Error::invalid("max candidates must be positive"));
        }
        Ok(())
    }
}

/// The stage-1 acceptance test, shared by the indexed and exhaustive paths.
/// All comparisons are case-insensitive.
pub fn surface_matches(query: &str, surface: &str, config: &CandidateConfig) -> bool {
    if trigram_overlap(query, surface) < config.trigram_threshold {
        return false;
    }
    let lev = levenshtein(&query.to_lowercase(), &surface.to_lowercase());
    if lev as f64 <= config.edit_factor * query.chars().count() as f64 {
        return true;
    }
    surface.split_whitespace().count() >= config.min_surface_words
        && word_diff(surface, query) <= config.max_word_diff
}

/// Inverted index from trigrams to surface form records.
pub struct TrigramIndex {
    postings: HashMap<Trigram, Vec<u32>>,
}

impl TrigramIndex {
    pub fn build(store: &SurfaceFormStore) -> TrigramIndex {
        let mut postings: HashMap<Trigram, Vec<u32>> = HashMap::new();
        for (i, rec) in store.records().iter().enumerate() {
            for t in trigrams(&rec.surface) {
                postings.entry(t).or_default().push(i as u32);
            }
        }
        TrigramIndex { postings }
    }

    /// Record indices sharing at least one trigram with the query.
    fn matches(&self, query: &str) -> Vec<u32> {
        let mut seen = BTreeSet::new();
        for t in trigrams(query) {
            if let Some(rows) = self.postings.get(&t) {
                seen.extend(rows.iter().copied());
            }
        }
        seen.into_iter().collect()
    }
}

/// How a candidate entered a mention's candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSource {
    Direct,
    Containment,
    Cooccurrence,
}

impl CandidateSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            CandidateSource::Direct => "direct",
            CandidateSource::Containment => "containment",
            CandidateSource::Cooccurrence => "cooccurrence",
        }
    }
}

impl std::str::FromStr for CandidateSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(CandidateSource::Direct),
            "containment" => Ok(CandidateSource::Containment),
            "cooccurrence" => Ok(CandidateSource::Cooccurrence),
            other => Err(Error::invalid(format!("unknown candidate source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entity_id: String,
    /// The entity surface form closest to the mention surface.
    pub best_sf: String,
    pub source: CandidateSource,
    pub score: f64,
}

/// Stage 1: candidates for a single query surface, ordered by entity id.
/// Scores are left at zero; scoring happens document-wide.
pub fn get_candidates_for_mention(
    query: &str,
    store: &SurfaceFormStore,
    index: &TrigramIndex,
    config: &CandidateConfig,
) -> Vec<Candidate> {
    let records = store.records();
    // entity -> matched surfaces
    let mut matched: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for rec_idx in index.matches(query) {
        let rec = &records[rec_idx as usize];
        if surface_matches(query, &rec.surface, config) {
            matched
                .entry(rec.entity_id.as_str())
                .or_default()
                .push(rec.surface.as_str());
        }
    }
    matched
        .into_iter()
        .map(|(entity, surfaces)| Candidate {
            entity_id: entity.to_string(),
            best_sf: closest_surface(query, surfaces.into_iter()).expect("nonempty"),
            source: CandidateSource::Direct,
            score: 0.0,
        })
        .collect()
}

/// The surface with the smallest edit distance to the query (lowercased),
/// ties broken lexicographically.
fn closest_surface<'a>(query: &str, surfaces: impl Iterator<Item = &'a str>) -> Option<String> {
    let q = query.to_lowercase();
    surfaces
        .map(|s| (levenshtein(&q, &s.to_lowercase()), s))
        .min_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, s)| s.to_string())
}

fn entity_best_sf(query: &str, entity: &str, store: &SurfaceFormStore) -> String {
    closest_surface(query, store.by_entity(entity).map(|r| r.surface.as_str()))
        .unwrap_or_else(|| entity.to_string())
}

/// Entity cooccurrence counts mined from training documents. Each document
/// contributes one count per distinct entity pair it mentions.
#[derive(Debug, Clone, Default)]
pub struct CooccurrenceStore {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl CooccurrenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mine(docs: &[Document]) -> CooccurrenceStore {
        let mut store = CooccurrenceStore::new();
        for doc in docs {
            let entities: BTreeSet<&str> = doc
                .mentions
                .iter()
                .filter_map(|m| m.gold.as_deref())
                .collect();
            let list: Vec<&str> = entities.into_iter().collect();
            for (i, a) in list.iter().enumerate() {
                for b in &list[i + 1..] {
                    store.add_pair(a, b, 1);
                }
            }
        }
        store
    }

    pub fn add_pair(&mut self, a: &str, b: &str, n: u64) {
        if a == b {
            return;
        }
        *self
            .counts
            .entry(a.to_string())
            .or_default()
            .entry(b.to_string())
            .or_insert(0) += n;
        *self
            .counts
            .entry(b.to_string())
            .or_default()
            .entry(a.to_string())
            .or_insert(0) += n;
    }

    /// The `r` most frequent neighbours, count descending, id ascending.
    pub fn top(&self, entity: &str, r: usize) -> Vec<(&str, u64)> {
        let Some(neighbors) = self.counts.get(entity) else {
            return Vec::new();
        };
        let mut list: Vec<(&str, u64)> = neighbors.iter().map(|(e, &c)| (e.as_str(), c)).collect();
        list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        list.truncate(r);
        list
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ArtifactWriter::create(path, "coocc")?;
        for (a, neighbors) in &self.counts {
            for (b, count) in neighbors {
                if a < b {
                    w.line(format_args!("{a}\t{b}\t{count}"))?;
                }
            }
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<CooccurrenceStore> {
        let mut r = ArtifactReader::open(path, "coocc", false)?;
        let mut store = CooccurrenceStore::new();
        while let Some((no, line)) = r.next_line()? {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(r.err(no, "expected `entity\\tentity\\tcount`"));
            }
            let count: u64 = cols[2]
                .parse()
                .map_err(|_| r.err(no, format!("bad count `{}`", cols[2])))?;
            store.add_pair(cols[0], cols[1], count);
        }
        Ok(store)
    }
}

/// Both stages of candidate generation for one document. Returns one
/// candidate list per mention, scored and cut to `max_candidates`.
pub fn generate_for_document(
    doc: &Document,
    store: &SurfaceFormStore,
    index: &TrigramIndex,
    coocc: &CooccurrenceStore,
    config: &CandidateConfig,
) -> Result<Vec<Vec<Candidate>>> {
    config.validate()?;
    let surfaces: Vec<&str> = doc.mentions.iter().map(|m| m.surface.as_str()).collect();
    let stage1: Vec<Vec<Candidate>> = surfaces
        .iter()
        .map(|s| get_candidates_for_mention(s, store, index, config))
        .collect();

    // Expansion works off the stage-1 snapshot so that the outcome does not
    // depend on mention order.
    let mut expanded: Vec<BTreeMap<String, Candidate>> = stage1
        .iter()
        .map(|cands| {
            cands
                .iter()
                .map(|c| (c.entity_id.clone(), c.clone()))
                .collect()
        })
        .collect();

    for (a, surface_a) in surfaces.iter().enumerate() {
        let sa = surface_a.to_lowercase();
        for (b, surface_b) in surfaces.iter().enumerate() {
            if a == b || !surface_b.to_lowercase().contains(&sa) {
                continue;
            }
            for cand in &stage1[b] {
                expanded[a].entry(cand.entity_id.clone()).or_insert_with(|| Candidate {
                    entity_id: cand.entity_id.clone(),
                    best_sf: entity_best_sf(surface_a, &cand.entity_id, store),
                    source: CandidateSource::Containment,
                    score: 0.0,
                });
            }
        }
    }

    for (a, surface_a) in surfaces.iter().enumerate() {
        let sa = surface_a.to_lowercase();
        // Distinct candidate entities of the other mentions.
        let mut others: BTreeSet<&str> = BTreeSet::new();
        for (b, cands) in stage1.iter().enumerate() {
            if b != a {
                others.extend(cands.iter().map(|c| c.entity_id.as_str()));
            }
        }
        for entity in others {
            for (neighbor, _count) in coocc.top(entity, config.coocc_top) {
                let has_containing_surface = store
                    .by_entity(neighbor)
                    .any(|r| r.surface.to_lowercase().contains(&sa));
                if has_containing_surface {
                    expanded[a].entry(neighbor.to_string()).or_insert_with(|| Candidate {
                        entity_id: neighbor.to_string(),
                        best_sf: entity_best_sf(surface_a, neighbor, store),
                        source: CandidateSource::Cooccurrence,
                        score: 0.0,
                    });
                }
            }
        }
    }

    // Document-level support: how many mentions carry each entity.
    let mut occurrence: HashMap<&str, u64> = HashMap::new();
    for cands in &expanded {
        for entity in cands.keys() {
            *occurrence.entry(entity.as_str()).or_insert(0) += 1;
        }
    }

    let mut result = Vec::with_capacity(expanded.len());
    for (cands, surface) in expanded.iter().zip(&surfaces) {
        let mut list: Vec<Candidate> = cands
            .values()
            .map(|c| {
                let mut c = c.clone();
                c.score = store.entity_total(&c.entity_id) as f64
                    + occurrence[c.entity_id.as_str()] as f64 * 100.0
                    - jaro_winkler_distance(&surface.to_lowercase(), &c.best_sf.to_lowercase())
                        * 10000.0;
                c
            })
            .collect();
        list.sort_by(|x, y| {
            y.score
                .partial_cmp(&x.score)
                .expect("scores are finite")
                .then_with(|| x.entity_id.cmp(&y.entity_id))
        });
        list.truncate(config.max_candidates);
        result.push(list);
    }
    Ok(result)
}

/// Fraction of linkable (non-NIL) mentions whose gold entity appears among
/// the candidates. Documents with no linkable mentions contribute nothing.
pub fn gold_recall(docs: &[Document], candidates: &[Vec<Vec<Candidate>>]) -> Result<f64> {
    if docs.len() != candidates.len() {
        return Err(Error::invalid("documents and candidate lists differ in length"));
    }
    let mut linkable = 0usize;
    let mut hit = 0usize;
    for (doc, cands) in docs.iter().zip(candidates) {
        if doc.mentions.len() != cands.len() {
            return Err(Error::invalid(format!(
                "document `{}` has {} mentions but {} candidate lists",
                doc.id,
                doc.mentions.len(),
                cands.len()
            )));
        }
        for (m, list) in doc.mentions.iter().zip(cands) {
            let Some(gold) = &m.gold else { continue };
            linkable += 1;
            if list.iter().any(|c| &c.entity_id == gold) {
                hit += 1;
            }
        }
    }
    if linkable == 0 {
        return Err(Error::invalid("no linkable mentions to measure recall on"));
    }
    Ok(hit as f64 / linkable as f64)
}

/// TSV dump: a `#doc <id> <num_mentions>` line per document, then one row
/// per candidate: `mention_index \t entity \t best_sf \t source \t score`.
pub fn write_candidates(per_doc: &[(String, Vec<Vec<Candidate>>)], path: &Path) -> Result<()> {
    let mut w = ArtifactWriter::create(path, "candidates")?;
    for (doc_id, mentions) in per_doc {
        w.line(format_args!("#doc {doc_id} {}", mentions.len()))?;
        for (i, cands) in mentions.iter().enumerate() {
            for c in cands {
                w.line(format_args!(
                    "{i}\t{}\t{}\t{}\t{:.6}",
                    c.entity_id,
                    c.best_sf,
                    c.source.as_str(),
                    c.score
                ))?;
            }
        }
    }
    w.finish()
}

pub fn read_candidates(path: &Path) -> Result<Vec<(String, Vec<Vec<Candidate>>)>> {
    let mut r = ArtifactReader::open(path, "candidates", true)?;
    let mut out: Vec<(String, Vec<Vec<Candidate>>)> = Vec::new();
    while let Some((no, line)) = r.next_line()? {
        if let Some(rest) = line.strip_prefix("#doc ") {
            let (id, count) = rest
                .rsplit_once(' ')
                .ok_or_else(|| r.err(no, "expected `#doc <id> <num_mentions>`"))?;
            let count: usize = count
                .parse()
                .map_err(|_| r.err(no, format!("bad mention count `{count}`")))?;
            out.push((id.to_string(), vec![Vec::new(); count]));
            continue;
        }
        let (doc_id, mentions) = out
            .last_mut()
            .ok_or_else(|| r.err(no, "candidate row before any `#doc` line"))?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(r.err(no, "expected 5 tab-separated columns"));
        }
        let idx: usize = cols[0]
            .parse()
            .map_err(|_| r.err(no, format!("bad mention index `{}`", cols[0])))?;
        if idx >= mentions.len() {
            return Err(r.err(
                no,
                format!("mention index {idx} out of range for document `{doc_id}`"),
            ));
        }
        mentions[idx].push(Candidate {
            entity_id: cols[1].to_string(),
            best_sf: cols[2].to_string(),
            source: cols[3].parse()?,
            score: cols[4]
                .parse()
                .map_err(|_| r.err(no, format!("bad score `{}`", cols[4])))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_util::parse_corpus_str;
    use crate::corpus::SfFlags;

    #[test]
    fn levenshtein_known_values() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("same", "same"), 0);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
        // Multi-byte characters count as single edits.
        assert_eq!(levenshtein("café", "cafe"), 1);
    }

    #[test]
    fn jaro_winkler_known_values() {
        assert!((jaro_winkler("MARTHA", "MARHTA") - 0.9611111111111111).abs() < 1e-12);
        assert!((jaro_winkler("DIXON", "DICKSONX") - 0.8133333333333332).abs() < 1e-12);
        assert_eq!(jaro_winkler("same", "same"), 1.0);
        assert_eq!(jaro_winkler("", "x"), 0.0);
        assert_eq!(jaro_winkler("", ""), 1.0);
        assert!((jaro_winkler_distance("a", "a") - 0.0).abs() < 1e-15);
        // Symmetry.
        assert_eq!(jaro_winkler("DWAYNE", "DUANE"), jaro_winkler("DUANE", "DWAYNE"));
    }

    #[test]
    fn trigram_overlap_counts_boundary_padded_triples() {
        // "abc" -> (#,a,b) (a,b,c) (b,c,#); "abcd" shares the first two.
        assert!((trigram_overlap("abc", "abcd") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(trigram_overlap("abc", "abc"), 1.0);
        assert_eq!(trigram_overlap("", "abc"), 0.0);
        // Case-insensitive.
        assert_eq!(trigram_overlap("ABC", "abc"), 1.0);
        // Set semantics: "aaaa" has 3 distinct trigrams, "aa" covers 2.
        assert!((trigram_overlap("aaaa", "aa") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn word_diff_is_one_sided() {
        assert_eq!(word_diff("Barack Obama", "Obama"), 1);
        assert_eq!(word_diff("Obama", "Barack Obama"), 0);
        assert_eq!(word_diff("New York City", "york"), 2);
    }

    fn store_with(surfaces: &[(&str, &str, u64)]) -> SurfaceFormStore {
        let mut store = SurfaceFormStore::new();
        for (entity, surface, freq) in surfaces {
            store.add(entity, surface, *freq, SfFlags::default());
        }
        store
    }

    #[test]
    fn stage1_accepts_by_edit_distance_or_word_overlap() {
        let store = store_with(&[
            ("E_obama", "Obama", 100),
            ("E_obama", "Barack Obama", 50),
            ("E_osama", "Osama", 10),
            ("E_other", "Blue Танк", 5),
        ]);
        let index = TrigramIndex::build(&store);
        let config = CandidateConfig::default();
        let cands = get_candidates_for_mention("Obama", &store, &index, &config);
        let ids: Vec<&str> = cands.iter().map(|c| c.entity_id.as_str()).collect();
        // "Obama" matches exactly; "Barack Obama" passes the word branch
        // (2 words, 1 not in query); "Osama" has trigram overlap 2/5 < 0.6.
        assert_eq!(ids, vec!["E_obama"]);
        assert_eq!(cands[0].best_sf, "Obama");

        let cands = get_candidates_for_mention("Osama", &store, &index, &config);
        let ids: Vec<&str> = cands.iter().map(|c| c.entity_id.as_str()).collect();
        assert_eq!(ids, vec!["E_osama"]);
    }

    #[test]
    fn stage1_is_case_insensitive() {
        let store = store_with(&[("E1", "Germany", 10)]);
        let index = TrigramIndex::build(&store);
        let cands =
            get_candidates_for_mention("GERMANY", &store, &index, &CandidateConfig::default());
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].entity_id, "E1");
    }

    #[test]
    fn index_path_equals_exhaustive_scan() {
        let store = store_with(&[
            ("E1", "New York", 10),
            ("E2", "New York City", 8),
            ("E3", "York", 6),
            ("E4", "Newport", 4),
            ("E5", "Hamburg", 2),
        ]);
        let index = TrigramIndex::build(&store);
        let config = CandidateConfig::default();
        for query in ["New York", "york", "Newpor", "Ham", "nothing-close"] {
            let indexed: Vec<String> = get_candidates_for_mention(query, &store, &index, &config)
                .into_iter()
                .map(|c| c.entity_id)
                .collect();
            let mut exhaustive: Vec<String> = store
                .records()
                .iter()
                .filter(|r| surface_matches(query, &r.surface, &config))
                .map(|r| r.entity_id.clone())
                .collect();
            exhaustive.sort();
            exhaustive.dedup();
            assert_eq!(indexed, exhaustive, "query {query}");
        }
    }

    #[test]
    fn containment_copies_candidates_from_longer_mentions() {
        let docs = parse_corpus_str(
            "#DOC d\n[[E_bo|Barack Hussein Obama]] spoke . Later [[E_bo|Obama]] left .\n\n",
        );
        let store =
            store_with(&[("E_bo", "Barack Hussein Obama", 100), ("E_other", "Obama Beach", 5)]);
        let index = TrigramIndex::build(&store);
        let coocc = CooccurrenceStore::new();
        let config = CandidateConfig::default();
        // The full name has two words beyond "Obama", so stage 1 cannot
        // reach E_bo from the short mention on its own.
        let direct = get_candidates_for_mention("Obama", &store, &index, &config);
        assert!(direct.iter().all(|c| c.entity_id != "E_bo"));
        let cands = generate_for_document(&docs[0], &store, &index, &coocc, &config).unwrap();
        // Containment copies E_bo over from the full-name mention.
        let second: Vec<&str> = cands[1].iter().map(|c| c.entity_id.as_str()).collect();
        assert!(second.contains(&"E_bo"));
        let e_bo = cands[1].iter().find(|c| c.entity_id == "E_bo").unwrap();
        assert_eq!(e_bo.source, CandidateSource::Containment);
        assert_eq!(e_bo.best_sf, "Barack Hussein Obama");
        // The full-name mention gains nothing from the shorter one's set it
        // already has.
        let first: Vec<&str> = cands[0].iter().map(|c| c.entity_id.as_str()).collect();
        assert!(first.contains(&"E_bo"));
    }

    #[test]
    fn cooccurrence_expansion_requires_containing_surface() {
        let docs = parse_corpus_str("#DOC d\n[[E_city|Springfield]] and [[E_team|United]] .\n\n");
        let store = store_with(&[
            ("E_city", "Springfield", 50),
            ("E_team", "United", 40),
            ("E_stadium", "Manchester United Arena", 30),
            ("E_far", "Shelbyville", 20),
        ]);
        let index = TrigramIndex::build(&store);
        let mut coocc = CooccurrenceStore::new();
        // E_city cooccurs with the stadium and a red herring.
        coocc.add_pair("E_city", "E_stadium", 9);
        coocc.add_pair("E_city", "E_far", 9);
        let config = CandidateConfig::default();
        // The stadium surface fails stage 1 for "United" (two words beyond
        // the query), so cooccurrence is its only route in.
        let direct = get_candidates_for_mention("United", &store, &index, &config);
        assert!(direct.iter().all(|c| c.entity_id != "E_stadium"));
        let cands =
            generate_for_document(&docs[0], &store, &index, &coocc, &config).unwrap();
        // Through E_city's neighbours, E_stadium arrives via cooccurrence
        // ("Manchester United Arena" contains "United"); E_far has no
        // containing surface and must not appear.
        let second: Vec<&str> = cands[1].iter().map(|c| c.entity_id.as_str()).collect();
        assert!(second.contains(&"E_stadium"));
        assert!(!second.contains(&"E_far"));
        let stadium = cands[1].iter().find(|c| c.entity_id == "E_stadium").unwrap();
        assert_eq!(stadium.source, CandidateSource::Cooccurrence);
    }

    #[test]
    fn scores_follow_the_published_formula() {
        let docs = parse_corpus_str("#DOC d\n[[E1|Alpha]] .\n\n");
        let store = store_with(&[("E1", "Alpha", 7), ("E1", "Alphas", 3)]);
        let index = TrigramIndex::build(&store);
        let coocc = CooccurrenceStore::new();
        let cands = generate_for_document(
            &docs[0],
            &store,
            &index,
            &coocc,
            &CandidateConfig::default(),
        )
        .unwrap();
        let c = &cands[0][0];
        // entity_frequency 10 (7 + 3), one supporting mention, exact match.
        let expected = 10.0 + 100.0 - 0.0;
        assert!((c.score - expected).abs() < 1e-9, "score {}", c.score);
    }

    #[test]
    fn cut_keeps_highest_scores_with_id_tiebreak() {
        let mut store = SurfaceFormStore::new();
        for i in 0..30 {
            store.add(&format!("E{i:02}"), "Twin", 5, SfFlags::default());
        }
        let docs = parse_corpus_str("#DOC d\n[[E00|Twin]] .\n\n");
        let index = TrigramIndex::build(&store);
        let config = CandidateConfig { max_candidates: 10, ..Default::default() };
        let cands = generate_for_document(
            &docs[0],
            &store,
            &index,
            &CooccurrenceStore::new(),
            &config,
        )
        .unwrap();
        assert_eq!(cands[0].len(), 10);
        // All scores tie, so the lowest entity ids survive.
        let ids: Vec<&str> = cands[0].iter().map(|c| c.entity_id.as_str()).collect();
        assert_eq!(ids[0], "E00");
        assert_eq!(ids[9], "E09");
    }

    #[test]
    fn coocc_top_orders_by_count_then_id() {
        let mut coocc = CooccurrenceStore::new();
        coocc.add_pair("A", "B", 3);
        coocc.add_pair("A", "C", 5);
        coocc.add_pair("A", "D", 3);
        let top = coocc.top("A", 2);
        assert_eq!(top, vec![("C", 5), ("B", 3)]);
        assert!(coocc.top("unknown", 3).is_empty());
    }

    #[test]
    fn coocc_roundtrip() {
        let mut coocc = CooccurrenceStore::new();
        coocc.add_pair("A", "B", 3);
        coocc.add_pair("B", "C", 1);
        let dir = std::env::temp_dir().join(format!("nedkit-coocc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("coocc.tsv");
        coocc.save(&path).unwrap();
        let back = CooccurrenceStore::load(&path).unwrap();
        assert_eq!(back.top("A", 5), vec![("B", 3)]);
        assert_eq!(back.top("B", 5), vec![("A", 3), ("C", 1)]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mine_counts_each_document_pair_once() {
        let docs = parse_corpus_str(
            "#DOC d1\n[[A|a]] [[B|b]] [[A|a]] .\n\n#DOC d2\n[[A|a]] [[B|b]] .\n\n",
        );
        let coocc = CooccurrenceStore::mine(&docs);
        assert_eq!(coocc.top("A", 5), vec![("B", 2)]);
    }

    #[test]
    fn candidates_file_roundtrip() {
        let per_doc = vec![(
            "doc1".to_string(),
            vec![
                vec![Candidate {
                    entity_id: "E1".to_string(),
                    best_sf: "Alpha".to_string(),
                    source: CandidateSource::Direct,
                    score: 109.5,
                }],
                Vec::new(),
            ],
        )];
        let dir = std::env::temp_dir().join(format!("nedkit-cands-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cands.tsv");
        write_candidates(&per_doc, &path).unwrap();
        let back = read_candidates(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, "doc1");
        assert_eq!(back[0].1.len(), 2);
        assert_eq!(back[0].1[0][0].entity_id, "E1");
        assert!(back[0].1[1].is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn gold_recall_counts_linkable_mentions() {
        let docs = parse_corpus_str("#DOC d\n[[E1|a]] [[NIL|b]] [[E2|c]] .\n\n");
        let mk = |id: &str| Candidate {
            entity_id: id.to_string(),
            best_sf: String::new(),
            source: CandidateSource::Direct,
            score: 0.0,
        };
        let cands = vec![vec![vec![mk("E1"), mk("EX")], vec![], vec![mk("EY")]]];
        let recall = gold_recall(&docs, &cands).unwrap();
        assert!((recall - 0.5).abs() < 1e-12);
    }
}
