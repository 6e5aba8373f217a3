//! Knowledge base, surface-form store, and annotated corpora.
//!
//! Input formats are plain TSV / text and may optionally carry an artifact
//! header. Mentions inside a corpus use inline `[[entity_id|w1 w2 ...]]`
//! markup; the pseudo-entity `NIL` marks a mention with no KB referent.

use crate::artifact::{ArtifactReader, ArtifactWriter};
use crate::clustering::Flavor;
use crate::error::{Error, Result};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

/// Coarse entity types used for the entity-type feature slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoarseType {
    Person,
    Organization,
    Location,
    SportsTeam,
    Misc,
}

impl CoarseType {
    pub const ALL: [CoarseType; 5] = [
        CoarseType::Person,
        CoarseType::Organization,
        CoarseType::Location,
        CoarseType::SportsTeam,
        CoarseType::Misc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CoarseType::Person => "Person",
            CoarseType::Organization => "Organization",
            CoarseType::Location => "Location",
            CoarseType::SportsTeam => "SportsTeam",
            CoarseType::Misc => "Misc",
        }
    }

    /// Slot index in the 5-way entity-type one-hot encoding.
    pub fn slot(&self) -> usize {
        match self {
            CoarseType::Person => 0,
            CoarseType::Organization => 1,
            CoarseType::Location => 2,
            CoarseType::SportsTeam => 3,
            CoarseType::Misc => 4,
        }
    }
}

impl std::fmt::Display for CoarseType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CoarseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Person" => Ok(CoarseType::Person),
            "Organization" => Ok(CoarseType::Organization),
            "Location" => Ok(CoarseType::Location),
            "SportsTeam" => Ok(CoarseType::SportsTeam),
            "Misc" => Ok(CoarseType::Misc),
            other => Err(Error::invalid(format!("unknown coarse type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Entity {
    pub id: String,
    /// Synsets after wikicat replacement, deduplicated but in first-seen order.
    pub synsets: Vec<String>,
    pub coarse_type: CoarseType,
    /// Total count of the entity in the surface-form dataset.
    pub frequency: u64,
    /// Cluster-type id per clustering flavor, filled by `clustering::assign_types`.
    pub cluster_types: BTreeMap<Flavor, u32>,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, Entity>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        KnowledgeBase::default()
    }

    pub fn insert(&mut self, entity: Entity) -> Result<()> {
        if self.entities.contains_key(&entity.id) {
            return Err(Error::invalid(format!("duplicate entity id `{}`", entity.id)));
        }
        self.entities.insert(entity.id.clone(), entity);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Entity> {
        self.entities.get_mut(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Entities in lexicographic id order.
    pub fn iter(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Entity> {
        self.entities.values_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(|s| s.as_str())
    }
}

/// Mapping from synset (or other KB type string) to coarse type.
pub type TypeMapping = HashMap<String, CoarseType>;

/// TSV: `synset_or_type \t {Person|Organization|Location|SportsTeam}`.
pub fn parse_type_mapping(path: &Path) -> Result<TypeMapping> {
    let mut reader = ArtifactReader::open(path, "type-mapping", false)?;
    let mut mapping = TypeMapping::new();
    while let Some((no, line)) = reader.next_line()? {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let key = cols.next().unwrap_or("");
        let ty = cols
            .next()
            .ok_or_else(|| reader.err(no, "expected 2 tab-separated columns"))?;
        if key.is_empty() {
            return Err(reader.err(no, "empty type key"));
        }
        let coarse: CoarseType = ty
            .trim()
            .parse()
            .map_err(|e: Error| reader.err(no, e.to_string()))?;
        if coarse == CoarseType::Misc {
            return Err(reader.err(no, "Misc is the implicit fallback and cannot be mapped"));
        }
        mapping.insert(key.to_string(), coarse);
    }
    Ok(mapping)
}

const WIKICAT_PREFIX: &str = "wikicat_";

/// Parses the knowledge base TSV: `entity_id \t synset1,synset2,... \t frequency`
/// with an optional fourth column `wikicat_x=hypernym;...` giving hypernyms for
/// `wikicat_`-prefixed synsets. Wikicat synsets with a hypernym are replaced by
/// it; the rest are dropped. The coarse type comes from the first synset (in
/// listed order, after replacement) present in `type_mapping`; Misc otherwise.
pub fn parse_kb(path: &Path, type_mapping: &TypeMapping) -> Result<KnowledgeBase> {
    let mut reader = ArtifactReader::open(path, "kb", false)?;
    let mut kb = KnowledgeBase::new();
    while let Some((no, line)) = reader.next_line()? {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(reader.err(no, format!("expected 3 or 4 columns, found {}", cols.len())));
        }
        let id = cols[0];
        if id.is_empty() {
            return Err(reader.err(no, "empty entity id"));
        }
        let frequency: u64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| reader.err(no, format!("invalid frequency `{}`", cols[2])))?;
        let hypernyms: HashMap<&str, &str> = match cols.get(3) {
            Some(col) if !col.is_empty() => col
                .split(';')
                .filter(|p| !p.is_empty())
                .map(|pair| {
                    pair.split_once('=')
                        .ok_or_else(|| reader.err(no, format!("invalid hypernym pair `{pair}`")))
                })
                .collect::<Result<_>>()?,
            _ => HashMap::new(),
        };
        let mut synsets = Vec::new();
        let mut seen = HashSet::new();
        for raw in cols[1].split(',').filter(|s| !s.is_empty()) {
            let resolved = if raw.starts_with(WIKICAT_PREFIX) {
                match hypernyms.get(raw) {
                    Some(h) => *h,
                    None => continue,
                }
            } else {
                raw
            };
            if seen.insert(resolved.to_string()) {
                synsets.push(resolved.to_string());
            }
        }
        let coarse_type = synsets
            .iter()
            .find_map(|s| type_mapping.get(s))
            .copied()
            .unwrap_or(CoarseType::Misc);
        kb.insert(Entity {
            id: id.to_string(),
            synsets,
            coarse_type,
            frequency,
            cluster_types: BTreeMap::new(),
        })
        .map_err(|e| reader.err(no, e.to_string()))?;
    }
    Ok(kb)
}

/// Derives the human-readable main title of an entity id: underscores become
/// spaces and one trailing parenthetical disambiguator is stripped.
pub fn derive_main_title(id: &str) -> String {
    let spaced = id.replace('_', " ");
    if spaced.ends_with(')') {
        if let Some(pos) = spaced.rfind(" (") {
            if pos > 0 {
                return spaced[..pos].to_string();
            }
        }
    }
    spaced
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SfFlags {
    pub redirect: bool,
    pub disambiguation: bool,
}

impl SfFlags {
    fn parse(s: &str) -> Result<Self> {
        let mut flags = SfFlags::default();
        for c in s.chars() {
            match c {
                'R' => flags.redirect = true,
                'D' => flags.disambiguation = true,
                other => return Err(Error::invalid(format!("unknown surface-form flag `{other}`"))),
            }
        }
        Ok(flags)
    }

    fn render(&self) -> String {
        let mut s = String::new();
        if self.redirect {
            s.push('R');
        }
        if self.disambiguation {
            s.push('D');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SfRecord {
    pub entity_id: String,
    pub surface: String,
    pub frequency: u64,
    pub flags: SfFlags,
}

/// All (entity, surface) records with lookups in both directions.
#[derive(Debug, Clone, Default)]
pub struct SurfaceFormStore {
    records: Vec<SfRecord>,
    by_surface: BTreeMap<String, Vec<usize>>,
    by_entity: BTreeMap<String, Vec<usize>>,
}

impl SurfaceFormStore {
    pub fn new() -> Self {
        SurfaceFormStore::default()
    }

    /// Adds a record, merging with an existing (entity, surface) row by
    /// summing frequencies and unioning flags.
    pub fn add(&mut self, entity_id: &str, surface: &str, frequency: u64, flags: SfFlags) {
        if let Some(&idx) = self
            .by_entity
            .get(entity_id)
            .and_then(|idxs| idxs.iter().find(|&&i| self.records[i].surface == surface))
        {
            let rec = &mut self.records[idx];
            rec.frequency += frequency;
            rec.flags.redirect |= flags.redirect;
            rec.flags.disambiguation |= flags.disambiguation;
            return;
        }
        let idx = self.records.len();
        self.records.push(SfRecord {
            entity_id: entity_id.to_string(),
            surface: surface.to_string(),
            frequency,
            flags,
        });
        self.by_surface.entry(surface.to_string()).or_default().push(idx);
        self.by_entity.entry(entity_id.to_string()).or_default().push(idx);
    }

    pub fn records(&self) -> &[SfRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records sharing a surface string, in insertion order.
    pub fn by_surface(&self, surface: &str) -> impl Iterator<Item = &SfRecord> {
        self.by_surface
            .get(surface)
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }

    /// Records of one entity, in insertion order.
    pub fn by_entity(&self, entity_id: &str) -> impl Iterator<Item = &SfRecord> {
        self.by_entity
            .get(entity_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }

    /// Distinct surfaces in lexicographic order.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.by_surface.keys().map(|s| s.as_str())
    }

    /// Total count of the entity across the surface-form dataset.
    pub fn entity_total(&self, entity_id: &str) -> u64 {
        self.by_entity(entity_id).map(|r| r.frequency).sum()
    }

    /// Frequency of one (entity, surface) record, 0 when absent.
    pub fn record_frequency(&self, entity_id: &str, surface: &str) -> u64 {
        self.by_entity(entity_id)
            .find(|r| r.surface == surface)
            .map(|r| r.frequency)
            .unwrap_or(0)
    }
}

/// TSV: `entity_id \t surface \t frequency \t flags` with flags ⊆ {R, D}.
/// The flags column may be empty or missing entirely.
pub fn parse_surface_forms(path: &Path) -> Result<SurfaceFormStore> {
    let mut reader = ArtifactReader::open(path, "surface-forms", false)?;
    let mut store = SurfaceFormStore::new();
    while let Some((no, line)) = reader.next_line()? {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(reader.err(no, format!("expected 3 or 4 columns, found {}", cols.len())));
        }
        if cols[0].is_empty() {
            return Err(reader.err(no, "empty entity id"));
        }
        if cols[1].is_empty() {
            return Err(reader.err(no, "empty surface form"));
        }
        let frequency: u64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| reader.err(no, format!("invalid frequency `{}`", cols[2])))?;
        let flags = SfFlags::parse(cols.get(3).copied().unwrap_or(""))
            .map_err(|e| reader.err(no, e.to_string()))?;
        store.add(cols[0], cols[1], frequency, flags);
    }
    Ok(store)
}

pub fn write_surface_forms(store: &SurfaceFormStore, path: &Path) -> Result<()> {
    let mut w = ArtifactWriter::create(path, "surface-forms")?;
    for rec in store.records() {
        w.line(format_args!(
            "{}\t{}\t{}\t{}",
            rec.entity_id,
            rec.surface,
            rec.frequency,
            rec.flags.render()
        ))?;
    }
    w.finish()
}

pub fn write_kb(kb: &KnowledgeBase, path: &Path) -> Result<()> {
    let mut w = ArtifactWriter::create(path, "kb")?;
    for entity in kb.iter() {
        w.line(format_args!(
            "{}\t{}\t{}",
            entity.id,
            entity.synsets.join(","),
            entity.frequency
        ))?;
    }
    w.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MentionSource {
    Manual,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub sentence: usize,
    /// Token span within the sentence, `start..end` exclusive.
    pub start: usize,
    pub end: usize,
    /// Mention words joined by single spaces.
    pub surface: String,
    /// `None` for NIL mentions (no KB referent).
    pub gold: Option<String>,
    pub source: MentionSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    /// Sorted by (sentence, start); spans never overlap.
    pub mentions: Vec<Mention>,
}

impl Document {
    pub fn mention_words(&self, m: &Mention) -> &[String] {
        &self.sentences[m.sentence][m.start..m.end]
    }
}

pub const NIL: &str = "NIL";

struct SentenceParse {
    tokens: Vec<String>,
    mentions: Vec<(usize, usize, Option<String>)>,
}

fn parse_sentence(line: &str, path: &str, no: usize) -> Result<SentenceParse> {
    let mut tokens = Vec::new();
    let mut mentions = Vec::new();
    let mut rest = line;
    loop {
        match rest.find("[[") {
            None => {
                if rest.contains("]]") {
                    return Err(Error::parse(path, no, "`]]` without matching `[["));
                }
                tokens.extend(rest.split_whitespace().map(str::to_string));
                break;
            }
            Some(open) => {
                let before = &rest[..open];
                if before.contains("]]") {
                    return Err(Error::parse(path, no, "`]]` without matching `[["));
                }
                tokens.extend(before.split_whitespace().map(str::to_string));
                let after = &rest[open + 2..];
                let close = after
                    .find("]]")
                    .ok_or_else(|| Error::parse(path, no, "unclosed `[[` mention"))?;
                let inner = &after[..close];
                let (entity, words) = inner
                    .split_once('|')
                    .ok_or_else(|| Error::parse(path, no, "mention missing `|` separator"))?;
                if entity.is_empty() {
                    return Err(Error::parse(path, no, "empty entity id in mention"));
                }
                let start = tokens.len();
                tokens.extend(words.split_whitespace().map(str::to_string));
                if tokens.len() == start {
                    return Err(Error::parse(path, no, "mention with no words"));
                }
                let gold = if entity == NIL { None } else { Some(entity.to_string()) };
                mentions.push((start, tokens.len(), gold));
                rest = &after[close + 2..];
            }
        }
    }
    Ok(SentenceParse { tokens, mentions })
}

fn parse_documents(reader: &mut ArtifactReader) -> Result<Vec<Document>> {
    let mut docs: Vec<Document> = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut current: Option<Document> = None;
    let path = reader.path().to_string();
    while let Some((no, line)) = reader.next_line()? {
        if line.trim().is_empty() {
            if let Some(doc) = current.take() {
                docs.push(doc);
            }
            continue;
        }
        if let Some(id) = line.strip_prefix("#DOC") {
            if current.is_some() {
                return Err(Error::parse(&path, no, "missing blank line before `#DOC`"));
            }
            let id = id.trim();
            if id.is_empty() {
                return Err(Error::parse(&path, no, "empty document id"));
            }
            if !seen_ids.insert(id.to_string()) {
                return Err(Error::parse(&path, no, format!("duplicate document id `{id}`")));
            }
            current = Some(Document { id: id.to_string(), sentences: Vec::new(), mentions: Vec::new() });
            continue;
        }
        let doc = current
            .as_mut()
            .ok_or_else(|| Error::parse(&path, no, "sentence line outside `#DOC` block"))?;
        let parsed = parse_sentence(&line, &path, no)?;
        let sentence = doc.sentences.len();
        for (start, end, gold) in parsed.mentions {
            doc.mentions.push(Mention {
                sentence,
                start,
                end,
                surface: parsed.tokens[start..end].join(" "),
                gold,
                source: MentionSource::Manual,
            });
        }
        doc.sentences.push(parsed.tokens);
    }
    if let Some(doc) = current.take() {
        docs.push(doc);
    }
    Ok(docs)
}

/// Parses a corpus of `#DOC` blocks; a blank line ends a block.
pub fn parse_corpus(path: &Path) -> Result<Vec<Document>> {
    let mut reader = ArtifactReader::open(path, "corpus", false)?;
    parse_documents(&mut reader)
}

pub fn write_corpus(docs: &[Document], path: &Path) -> Result<()> {
    let mut w = ArtifactWriter::create(path, "corpus")?;
    for doc in docs {
        w.line(format_args!("#DOC {}", doc.id))?;
        for (s, sentence) in doc.sentences.iter().enumerate() {
            let mut parts: Vec<String> = Vec::new();
            let mut t = 0;
            let mut mentions = doc
                .mentions
                .iter()
                .filter(|m| m.sentence == s)
                .collect::<Vec<_>>();
            mentions.sort_by_key(|m| m.start);
            let mut next = mentions.into_iter().peekable();
            while t < sentence.len() {
                if let Some(m) = next.peek() {
                    if m.start == t {
                        let entity = m.gold.as_deref().unwrap_or(NIL);
                        parts.push(format!("[[{}|{}]]", entity, sentence[m.start..m.end].join(" ")));
                        t = m.end;
                        next.next();
                        continue;
                    }
                }
                parts.push(sentence[t].clone());
                t += 1;
            }
            w.line(parts.join(" "))?;
        }
        w.line("")?;
    }
    w.finish()
}

/// Extends gold annotations inside one document: an exact token sequence that
/// was manually annotated with an entity gets the same entity at every later
/// unannotated occurrence. Longest candidate sequence wins on overlap, ties go
/// to the leftmost start, and new spans never overlap existing mentions.
/// A surface becomes eligible only after its first manual annotation, matches
/// never cross sentence boundaries, and the operation is idempotent.
/// Returns the number of mentions added.
pub fn auto_annotate(doc: &mut Document) -> usize {
    // (sentence, start) of the first manual annotation per token sequence.
    let mut eligible: BTreeMap<Vec<String>, (String, (usize, usize))> = BTreeMap::new();
    for m in &doc.mentions {
        if m.source != MentionSource::Manual {
            continue;
        }
        let Some(gold) = &m.gold else { continue };
        let words = doc.mention_words(m).to_vec();
        eligible
            .entry(words)
            .or_insert_with(|| (gold.clone(), (m.sentence, m.start)));
    }
    if eligible.is_empty() {
        return 0;
    }

    let mut occupied: HashSet<(usize, usize)> = HashSet::new();
    for m in &doc.mentions {
        for t in m.start..m.end {
            occupied.insert((m.sentence, t));
        }
    }

    // (len, sentence, start, entity) candidates, then greedy longest-first.
    let mut candidates: Vec<(usize, usize, usize, &str)> = Vec::new();
    for (seq, (entity, first_pos)) in &eligible {
        let len = seq.len();
        for (s, sentence) in doc.sentences.iter().enumerate() {
            if sentence.len() < len {
                continue;
            }
            for t in 0..=sentence.len() - len {
                if (s, t) <= *first_pos {
                    continue;
                }
                if sentence[t..t + len] != seq[..] {
                    continue;
                }
                if (t..t + len).any(|i| occupied.contains(&(s, i))) {
                    continue;
                }
                candidates.push((len, s, t, entity));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut added = 0;
    for (len, s, t, entity) in candidates {
        if (t..t + len).any(|i| occupied.contains(&(s, i))) {
            continue;
        }
        for i in t..t + len {
            occupied.insert((s, i));
        }
        doc.mentions.push(Mention {
            sentence: s,
            start: t,
            end: t + len,
            surface: doc.sentences[s][t..t + len].join(" "),
            gold: Some(entity.to_string()),
            source: MentionSource::Auto,
        });
        added += 1;
    }
    doc.mentions.sort_by_key(|m| (m.sentence, m.start));
    added
}

/// Returns mention gold ids referenced by the corpus but absent from the KB.
pub fn unknown_entity_ids(docs: &[Document], kb: &KnowledgeBase) -> BTreeSet<String> {
    let mut unknown = BTreeSet::new();
    for doc in docs {
        for m in &doc.mentions {
            if let Some(gold) = &m.gold {
                if !kb.contains(gold) {
                    unknown.insert(gold.clone());
                }
            }
        }
    }
    unknown
}
