//! Context extraction around mentions and the derived training inputs:
//! entity-as-token streams, surrounding-surface pairs, synset pairs,
//! cluster-centric streams, and labeled typing datasets.

use crate::artifact::{ArtifactReader, ArtifactWriter};
use crate::clustering::{Clustering, Flavor};
use crate::corpus::{Document, KnowledgeBase, Mention};
use crate::error::{Error, Result};
use std::collections::HashSet;
use std::path::Path;

/// Mentions considered on each side when building surface or entity contexts.
pub const NEIGHBOR_MENTIONS: usize = 10;

/// The three context formats a mention can be rendered in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContextFormat {
    /// Words of the mention's sentence.
    Wc,
    /// Surface forms of the surrounding mentions.
    Sfc,
    /// Entity ids of the surrounding mentions.
    Ec,
}

impl ContextFormat {
    /// The format each clustering flavor's typing model consumes.
    pub fn for_flavor(flavor: Flavor) -> ContextFormat {
        match flavor {
            Flavor::Word | Flavor::Synset => ContextFormat::Wc,
            Flavor::Surface | Flavor::Brown => ContextFormat::Sfc,
            Flavor::Entity => ContextFormat::Ec,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ContextFormat::Wc => "WC",
            ContextFormat::Sfc => "SFC",
            ContextFormat::Ec => "EC",
        }
    }
}

impl std::fmt::Display for ContextFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ContextFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WC" => Ok(ContextFormat::Wc),
            "SFC" => Ok(ContextFormat::Sfc),
            "EC" => Ok(ContextFormat::Ec),
            other => Err(Error::invalid(format!("unknown context format `{other}`"))),
        }
    }
}

/// A mention's rendered context. `left` and `right` are in natural document
/// order; consumers that want to read the right context inward reverse it
/// themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub left: Vec<String>,
    pub surface: Vec<String>,
    pub right: Vec<String>,
    pub format: ContextFormat,
}

/// One labeled training instance for a typing model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypingInstance {
    pub window: ContextWindow,
    pub label: u32,
    pub entity_id: String,
}

/// Renders the context of `doc.mentions[mention_index]` in the given format.
/// WC stays within the mention's sentence; SFC and EC look at up to
/// `NEIGHBOR_MENTIONS` mentions per side (for EC, only mentions carrying an
/// entity id count as neighbours).
pub fn extract_context(doc: &Document, mention_index: usize, format: ContextFormat) -> ContextWindow {
    let mention = &doc.mentions[mention_index];
    let surface: Vec<String> = doc.mention_words(mention).to_vec();
    match format {
        ContextFormat::Wc => {
            let sentence = &doc.sentences[mention.sentence];
            ContextWindow {
                left: sentence[..mention.start].to_vec(),
                surface,
                right: sentence[mention.end..].to_vec(),
                format,
            }
        }
        ContextFormat::Sfc => {
            let render = |m: &Mention| Some(doc.mention_words(m).to_vec());
            let (left, right) = neighbor_tokens(doc, mention_index, render);
            ContextWindow { left, surface, right, format }
        }
        ContextFormat::Ec => {
            let render = |m: &Mention| m.gold.clone().map(|id| vec![id]);
            let (left, right) = neighbor_tokens(doc, mention_index, render);
            ContextWindow { left, surface, right, format }
        }
    }
}

/// Collects tokens from up to `NEIGHBOR_MENTIONS` renderable mentions on each
/// side of `mention_index`, in document order.
fn neighbor_tokens(
    doc: &Document,
    mention_index: usize,
    render: impl Fn(&Mention) -> Option<Vec<String>>,
) -> (Vec<String>, Vec<String>) {
    let mut left_groups: Vec<Vec<String>> = Vec::new();
    for m in doc.mentions[..mention_index].iter().rev() {
        if left_groups.len() == NEIGHBOR_MENTIONS {
            break;
        }
        if let Some(tokens) = render(m) {
            left_groups.push(tokens);
        }
    }
    left_groups.reverse();
    let left = left_groups.into_iter().flatten().collect();

    let mut right = Vec::new();
    let mut taken = 0;
    for m in &doc.mentions[mention_index + 1..] {
        if taken == NEIGHBOR_MENTIONS {
            break;
        }
        if let Some(tokens) = render(m) {
            right.extend(tokens);
            taken += 1;
        }
    }
    (left, right)
}

/// Token streams for word/entity embedding training: document text with each
/// entity-bearing mention span collapsed into its entity id token. NIL
/// mentions keep their words.
pub fn build_wc_training_stream(docs: &[Document]) -> Vec<Vec<String>> {
    docs.iter()
        .map(|doc| {
            let mut stream = Vec::new();
            for (s, sentence) in doc.sentences.iter().enumerate() {
                let mut t = 0;
                while t < sentence.len() {
                    if let Some(m) = doc
                        .mentions
                        .iter()
                        .find(|m| m.sentence == s && m.start == t && m.gold.is_some())
                    {
                        stream.push(m.gold.clone().unwrap());
                        t = m.end;
                    } else {
                        stream.push(sentence[t].clone());
                        t += 1;
                    }
                }
            }
            stream
        })
        .collect()
}

/// Entity-context streams: per document, the sequence of entity ids of its
/// entity-bearing mentions in document order.
pub fn build_ec_training_stream(docs: &[Document]) -> Vec<Vec<String>> {
    docs.iter()
        .map(|doc| doc.mentions.iter().filter_map(|m| m.gold.clone()).collect())
        .collect()
}

/// (entity, word) pairs for surface-context embeddings: each entity-bearing
/// mention pairs its entity with every word of the surface forms of up to
/// `NEIGHBOR_MENTIONS` mentions on each side.
pub fn build_sfc_pairs(docs: &[Document]) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for doc in docs {
        for (i, mention) in doc.mentions.iter().enumerate() {
            let Some(entity) = &mention.gold else { continue };
            let render = |m: &Mention| Some(doc.mention_words(m).to_vec());
            let (left, right) = neighbor_tokens(doc, i, render);
            for word in left.into_iter().chain(right) {
                pairs.push((entity.clone(), word));
            }
        }
    }
    pairs
}

/// (entity, synset) pairs, one per synset surviving the optional filter list.
pub fn build_synset_pairs(kb: &KnowledgeBase, filter: Option<&HashSet<String>>) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for entity in kb.iter() {
        for synset in &entity.synsets {
            if filter.map_or(false, |f| f.contains(synset)) {
                continue;
            }
            pairs.push((entity.id.clone(), synset.clone()));
        }
    }
    pairs
}

/// The stream token announcing cluster membership, e.g. `⟨CLUSTER_3⟩`.
pub fn cluster_token(id: u32) -> String {
    format!("\u{27E8}CLUSTER_{id}\u{27E9}")
}

/// Cluster-centric streams: document text where each entity-bearing mention
/// is rendered as its surface words followed by the entity's cluster token.
/// Unclustered entities and NIL mentions contribute surface words only; no
/// entity id token ever appears.
pub fn build_cluster_centric_stream(docs: &[Document], clustering: &Clustering) -> Vec<Vec<String>> {
    docs.iter()
        .map(|doc| {
            let mut stream = Vec::new();
            for (s, sentence) in doc.sentences.iter().enumerate() {
                let mut t = 0;
                while t < sentence.len() {
                    if let Some(m) = doc
                        .mentions
                        .iter()
                        .find(|m| m.sentence == s && m.start == t)
                    {
                        stream.extend_from_slice(&sentence[m.start..m.end]);
                        if let Some(cluster) =
                            m.gold.as_deref().and_then(|id| clustering.cluster(id))
                        {
                            stream.push(cluster_token(cluster));
                        }
                        t = m.end;
                    } else {
                        stream.push(sentence[t].clone());
                        t += 1;
                    }
                }
            }
            stream
        })
        .collect()
}

/// (word, cluster token) pairs for surface-word embeddings. Every surface
/// word of an entity's record contributes `max(1, round(ln frequency))`
/// copies; records of unclustered entities are skipped.
pub fn build_sf_word_pairs(
    store: &crate::corpus::SurfaceFormStore,
    clustering: &Clustering,
) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for rec in store.records() {
        let Some(cluster) = clustering.cluster(&rec.entity_id) else { continue };
        let token = cluster_token(cluster);
        let copies = ((rec.frequency as f64).ln().round() as i64).max(1) as usize;
        for word in rec.surface.split_whitespace() {
            for _ in 0..copies {
                pairs.push((word.to_string(), token.clone()));
            }
        }
    }
    pairs
}

/// Bounds applied while building typing datasets. Only the WC format filters
/// by sentence length.
#[derive(Debug, Clone, Copy)]
pub struct TypingFilters {
    pub wc_min_words: usize,
    pub wc_max_words: usize,
}

impl Default for TypingFilters {
    fn default() -> Self {
        TypingFilters { wc_min_words: 10, wc_max_words: 50 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DatasetSkips {
    /// Mentions without an entity id.
    pub nil: usize,
    /// Mentions whose entity has no cluster id in the clustering.
    pub unclustered: usize,
    /// WC instances dropped by the sentence length filter.
    pub sentence_filtered: usize,
}

/// Builds labeled typing instances: one per entity-bearing mention whose
/// entity is clustered, labeled with its cluster id and rendered in `format`.
pub fn build_typing_dataset(
    docs: &[Document],
    clustering: &Clustering,
    format: ContextFormat,
    filters: TypingFilters,
) -> (Vec<TypingInstance>, DatasetSkips) {
    let mut instances = Vec::new();
    let mut skips = DatasetSkips::default();
    for doc in docs {
        for (i, mention) in doc.mentions.iter().enumerate() {
            let Some(entity) = &mention.gold else {
                skips.nil += 1;
                continue;
            };
            let Some(label) = clustering.cluster(entity) else {
                skips.unclustered += 1;
                continue;
            };
            if format == ContextFormat::Wc {
                let len = doc.sentences[mention.sentence].len();
                if len < filters.wc_min_words || len > filters.wc_max_words {
                    skips.sentence_filtered += 1;
                    continue;
                }
            }
            instances.push(TypingInstance {
                window: extract_context(doc, i, format),
                label,
                entity_id: entity.clone(),
            });
        }
    }
    (instances, skips)
}

fn check_stream_token(token: &str, what: &str) -> Result<()> {
    if token.is_empty() || token.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "{what} token `{token}` is empty or contains whitespace"
        )));
    }
    Ok(())
}

/// One document per line, tokens space-separated.
pub fn write_streams(streams: &[Vec<String>], path: &Path) -> Result<()> {
    let mut w = ArtifactWriter::create(path, "stream")?;
    for stream in streams {
        for token in stream {
            check_stream_token(token, "stream")?;
        }
        w.line(stream.join(" "))?;
    }
    w.finish()
}

pub fn read_streams(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = ArtifactReader::open(path, "stream", false)?;
    let mut streams = Vec::new();
    while let Some((_, line)) = reader.next_line()? {
        streams.push(line.split_whitespace().map(str::to_string).collect());
    }
    Ok(streams)
}

/// TSV `target \t context`.
pub fn write_pairs(pairs: &[(String, String)], path: &Path) -> Result<()> {
    let mut w = ArtifactWriter::create(path, "pairs")?;
    for (target, context) in pairs {
        check_stream_token(target, "pair target")?;
        check_stream_token(context, "pair context")?;
        w.line(format_args!("{target}\t{context}"))?;
    }
    w.finish()
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = ArtifactReader::open(path, "pairs", false)?;
    let mut pairs = Vec::new();
    while let Some((no, line)) = reader.next_line()? {
        if line.trim().is_empty() {
            continue;
        }
        let (target, context) = line
            .split_once('\t')
            .ok_or_else(|| reader.err(no, "expected `target\\tcontext`"))?;
        pairs.push((target.to_string(), context.to_string()));
    }
    Ok(pairs)
}

fn join_channel(tokens: &[String]) -> Result<String> {
    for t in tokens {
        if t.contains('|') || t.contains('\t') {
            return Err(Error::invalid(format!(
                "token `{t}` contains a reserved separator and cannot be serialized"
            )));
        }
    }
    Ok(tokens.join(" "))
}

/// TSV `label \t entity_id \t left|surface|right`, preceded by a
/// `#<format> <num_classes>` header line.
pub fn write_typing_dataset(
    instances: &[TypingInstance],
    format: ContextFormat,
    num_classes: u32,
    path: &Path,
) -> Result<()> {
    let mut w = ArtifactWriter::create(path, "typing-data")?;
    w.line(format_args!("#{format} {num_classes}"))?;
    for inst in instances {
        if inst.window.format != format {
            return Err(Error::invalid(format!(
                "instance format {} does not match dataset format {format}",
                inst.window.format
            )));
        }
        if inst.label >= num_classes {
            return Err(Error::invalid(format!(
                "label {} out of range for {num_classes} classes",
                inst.label
            )));
        }
        w.line(format_args!(
            "{}\t{}\t{}|{}|{}",
            inst.label,
            inst.entity_id,
            join_channel(&inst.window.left)?,
            join_channel(&inst.window.surface)?,
            join_channel(&inst.window.right)?,
        ))?;
    }
    w.finish()
}

pub fn read_typing_dataset(path: &Path) -> Result<(Vec<TypingInstance>, ContextFormat, u32)> {
    let mut reader = ArtifactReader::open(path, "typing-data", true)?;
    let (no, header) = reader
        .next_line()?
        .ok_or_else(|| reader.err(0, "empty typing dataset"))?;
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| reader.err(no, "expected `#<format> <num_classes>` header"))?;
    let mut parts = body.split_whitespace();
    let format: ContextFormat = parts
        .next()
        .ok_or_else(|| reader.err(no, "missing format"))?
        .parse()
        .map_err(|e: Error| reader.err(no, e.to_string()))?;
    let num_classes: u32 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| reader.err(no, "missing or invalid class count"))?;
    let mut instances = Vec::new();
    while let Some((no, line)) = reader.next_line()? {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        if cols.len() != 3 {
            return Err(reader.err(no, "expected `label\\tentity_id\\tleft|surface|right`"));
        }
        let label: u32 = cols[0]
            .parse()
            .map_err(|_| reader.err(no, format!("invalid label `{}`", cols[0])))?;
        if label >= num_classes {
            return Err(reader.err(no, format!("label {label} out of range ({num_classes} classes)")));
        }
        let channels: Vec<&str> = cols[2].split('|').collect();
        if channels.len() != 3 {
            return Err(reader.err(no, "expected three `|`-separated channels"));
        }
        let tokens = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        instances.push(TypingInstance {
            window: ContextWindow {
                left: tokens(channels[0]),
                surface: tokens(channels[1]),
                right: tokens(channels[2]),
                format,
            },
            label,
            entity_id: cols[1].to_string(),
        });
    }
    Ok((instances, format, num_classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_util::parse_corpus_str;

    fn doc_with_mentions() -> Document {
        parse_corpus_str(
            "#DOC d\nYesterday [[E1|Alpha Beta]] met [[NIL|Someone New]] near [[E2|Gamma]] .\n\
             Then [[E3|Delta]] arrived .\n\n",
        )
        .remove(0)
    }

    #[test]
    fn wc_context_is_sentence_local() {
        let doc = doc_with_mentions();
        let w = extract_context(&doc, 0, ContextFormat::Wc);
        assert_eq!(w.left, vec!["Yesterday"]);
        assert_eq!(w.surface, vec!["Alpha", "Beta"]);
        assert_eq!(w.right, vec!["met", "Someone", "New", "near", "Gamma", "."]);
        // The second sentence never leaks in.
        assert!(!w.right.contains(&"Delta".to_string()));
    }

    #[test]
    fn sfc_context_lists_neighbor_surfaces() {
        let doc = doc_with_mentions();
        // Mention 2 = Gamma: left neighbours are Alpha Beta and the NIL
        // mention, right neighbour is Delta.
        let w = extract_context(&doc, 2, ContextFormat::Sfc);
        assert_eq!(w.left, vec!["Alpha", "Beta", "Someone", "New"]);
        assert_eq!(w.surface, vec!["Gamma"]);
        assert_eq!(w.right, vec!["Delta"]);
    }

    #[test]
    fn ec_context_skips_nil_neighbors() {
        let doc = doc_with_mentions();
        let w = extract_context(&doc, 2, ContextFormat::Ec);
        assert_eq!(w.left, vec!["E1"]);
        assert_eq!(w.surface, vec!["Gamma"]);
        assert_eq!(w.right, vec!["E3"]);
    }

    #[test]
    fn neighbor_cap_applies_per_side() {
        let mut lines = String::from("#DOC d\n");
        for i in 0..30 {
            lines.push_str(&format!("[[E{i}|m{i}]] . "));
        }
        lines.push_str("\n\n");
        let doc = parse_corpus_str(&lines).remove(0);
        let w = extract_context(&doc, 15, ContextFormat::Ec);
        assert_eq!(w.left.len(), NEIGHBOR_MENTIONS);
        assert_eq!(w.left.first().map(String::as_str), Some("E5"));
        assert_eq!(w.left.last().map(String::as_str), Some("E14"));
        assert_eq!(w.right.len(), NEIGHBOR_MENTIONS);
        assert_eq!(w.right.last().map(String::as_str), Some("E25"));
    }

    #[test]
    fn wc_stream_replaces_mentions_with_ids() {
        let docs = parse_corpus_str(
            "#DOC d\nThe band [[Boston_(band)|Boston]] played [[NIL|mystery gig]] loud .\n\n",
        );
        let streams = build_wc_training_stream(&docs);
        assert_eq!(
            streams[0],
            vec!["The", "band", "Boston_(band)", "played", "mystery", "gig", "loud", "."]
        );
    }

    #[test]
    fn ec_stream_is_mention_id_sequence() {
        let docs = parse_corpus_str(
            "#DOC d\n[[E1|a]] then [[NIL|b]] then [[E2|c]] .\n[[E3|d]] .\n\n#DOC e\nnothing .\n\n",
        );
        let streams = build_ec_training_stream(&docs);
        assert_eq!(streams[0], vec!["E1", "E2", "E3"]);
        assert!(streams[1].is_empty());
    }

    #[test]
    fn sfc_pairs_pair_entity_with_neighbor_words() {
        let docs = parse_corpus_str("#DOC d\n[[E1|New York]] hosts [[E2|Obama]] and [[E3|Berlin]] .\n\n");
        let pairs = build_sfc_pairs(&docs);
        let for_e2: Vec<&str> = pairs
            .iter()
            .filter(|(t, _)| t == "E2")
            .map(|(_, c)| c.as_str())
            .collect();
        assert_eq!(for_e2, vec!["New", "York", "Berlin"]);
        // A mention's own surface is not its context.
        assert!(!pairs.contains(&("E2".to_string(), "Obama".to_string())));
    }

    #[test]
    fn synset_pairs_respect_filter() {
        use crate::corpus::{parse_kb, parse_type_mapping};
        use crate::corpus::test_util::temp_file;
        let kb = parse_kb(
            &temp_file("kb", "E1\ts1,s2\t1\nE2\ts2\t1\n"),
            &parse_type_mapping(&temp_file("tm", "")).unwrap(),
        )
        .unwrap();
        let all = build_synset_pairs(&kb, None);
        assert_eq!(all.len(), 3);
        let filter: HashSet<String> = ["s2".to_string()].into();
        let filtered = build_synset_pairs(&kb, Some(&filter));
        assert_eq!(filtered, vec![("E1".to_string(), "s1".to_string())]);
    }

    #[test]
    fn cluster_centric_stream_appends_cluster_tokens() {
        let docs = parse_corpus_str("#DOC d\n[[E1|Alpha Beta]] met [[E2|Gamma]] .\n\n");
        let mut clustering = Clustering::new(Flavor::Word, 4);
        clustering.insert("E1", 3).unwrap();
        let streams = build_cluster_centric_stream(&docs, &clustering);
        assert_eq!(
            streams[0],
            vec!["Alpha", "Beta", "\u{27E8}CLUSTER_3\u{27E9}", "met", "Gamma", "."]
        );
    }

    #[test]
    fn sf_word_pairs_scale_with_log_frequency() {
        use crate::corpus::{SfFlags, SurfaceFormStore};
        let mut store = SurfaceFormStore::new();
        store.add("E1", "New York", 1000, SfFlags::default());
        store.add("E1", "NY", 1, SfFlags::default());
        store.add("Ghost", "boo", 50, SfFlags::default());
        let mut clustering = Clustering::new(Flavor::Surface, 2);
        clustering.insert("E1", 1).unwrap();
        let pairs = build_sf_word_pairs(&store, &clustering);
        let count = |w: &str| pairs.iter().filter(|(t, _)| t == w).count();
        // ln 1000 = 6.907... rounds to 7 copies per word.
        assert_eq!(count("New"), 7);
        assert_eq!(count("York"), 7);
        // ln 1 = 0 is clamped to a single copy.
        assert_eq!(count("NY"), 1);
        // Unclustered entity is skipped entirely.
        assert_eq!(count("boo"), 0);
        assert!(pairs.iter().all(|(_, c)| c == &cluster_token(1)));
    }

    #[test]
    fn typing_dataset_labels_and_skips() {
        let docs = parse_corpus_str(
            "#DOC d\nw1 w2 w3 w4 [[E1|Alpha]] w6 w7 w8 w9 w10 .\nshort [[E2|Beta]] .\n\
             [[NIL|x]] also w4 w5 w6 w7 w8 w9 w10 .\n\n",
        );
        let mut clustering = Clustering::new(Flavor::Word, 3);
        clustering.insert("E1", 2).unwrap();
        let (instances, skips) =
            build_typing_dataset(&docs, &clustering, ContextFormat::Wc, TypingFilters::default());
        assert_eq!(instances.len(), 1);
        assert_eq!(instances[0].label, 2);
        assert_eq!(instances[0].entity_id, "E1");
        // E2's sentence has 3 words (below 10), the NIL mention has no label,
        // and E2 is also unclustered; the length filter is never reached.
        assert_eq!(skips, DatasetSkips { nil: 1, unclustered: 1, sentence_filtered: 0 });

        let (sfc_instances, _) =
            build_typing_dataset(&docs, &clustering, ContextFormat::Sfc, TypingFilters::default());
        assert_eq!(sfc_instances.len(), 1);
        assert_eq!(sfc_instances[0].window.format, ContextFormat::Sfc);
    }

    #[test]
    fn wc_length_filter_counts() {
        let docs = parse_corpus_str("#DOC d\nshort [[E1|Alpha]] .\n\n");
        let mut clustering = Clustering::new(Flavor::Word, 1);
        clustering.insert("E1", 0).unwrap();
        let (instances, skips) =
            build_typing_dataset(&docs, &clustering, ContextFormat::Wc, TypingFilters::default());
        assert!(instances.is_empty());
        assert_eq!(skips.sentence_filtered, 1);
    }

    #[test]
    fn typing_dataset_roundtrip() {
        let docs = parse_corpus_str("#DOC d\n[[E1|Alpha]] met [[E2|Beta Gamma]] near [[E1|Alpha]] .\n\n");
        let mut clustering = Clustering::new(Flavor::Surface, 2);
        clustering.insert("E1", 0).unwrap();
        clustering.insert("E2", 1).unwrap();
        let (instances, _) =
            build_typing_dataset(&docs, &clustering, ContextFormat::Sfc, TypingFilters::default());
        assert_eq!(instances.len(), 3);
        let dir = std::env::temp_dir().join(format!("nedkit-ctx-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.tsv");
        write_typing_dataset(&instances, ContextFormat::Sfc, 2, &path).unwrap();
        let (back, format, k) = read_typing_dataset(&path).unwrap();
        assert_eq!(back, instances);
        assert_eq!(format, ContextFormat::Sfc);
        assert_eq!(k, 2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn streams_and_pairs_roundtrip() {
        let dir = std::env::temp_dir().join(format!("nedkit-ctx2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let streams = vec![
            vec!["a".to_string(), "b".to_string()],
            vec![],
            vec!["c".to_string()],
        ];
        let spath = dir.join("s.txt");
        write_streams(&streams, &spath).unwrap();
        assert_eq!(read_streams(&spath).unwrap(), streams);

        let pairs = vec![("t".to_string(), "c".to_string())];
        let ppath = dir.join("p.tsv");
        write_pairs(&pairs, &ppath).unwrap();
        assert_eq!(read_pairs(&ppath).unwrap(), pairs);
        std::fs::remove_dir_all(&dir).ok();
    }
}
