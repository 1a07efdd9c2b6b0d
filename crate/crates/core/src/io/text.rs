use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::{read_text, write_file, DataError, FeatureTable};
use crate::metrics::RetrievalRelevance;

/// One positive image-text pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pair {
    pub image_id: String,
    pub text_id: String,
}

impl Pair {
    pub fn new(image: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            image_id: image.into(),
            text_id: text.into(),
        }
    }
}

/// A scored sentence pair for similarity evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct StsPair {
    pub a: String,
    pub b: String,
    pub score: f64,
}

/// Splits text into numbered lines. A trailing newline does not start a new line.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let empty = body.is_empty() && text.is_empty();
    body.split('\n')
        .enumerate()
        .filter(move |_| !empty)
        .map(|(i, l)| (i + 1, l))
}

fn check_line(line: usize, l: &str) -> Result<(), DataError> {
    if l.is_empty() {
        return Err(malformed(line, "empty line"));
    }
    if l.contains('\r') {
        return Err(malformed(line, "carriage return in line"));
    }
    Ok(())
}

fn check_id(line: usize, id: &str, what: &str) -> Result<(), DataError> {
    if id.is_empty() {
        return Err(malformed(line, &format!("empty {what}")));
    }
    if id.len() > u16::MAX as usize {
        return Err(malformed(line, &format!("{what} longer than 65535 bytes")));
    }
    Ok(())
}

fn malformed(line: usize, reason: &str) -> DataError {
    DataError::MalformedLine {
        line,
        reason: reason.to_string(),
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<Pair>, DataError> {
    let mut out = Vec::new();
    for (line, l) in lines(text) {
        check_line(line, l)?;
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 2 {
            return Err(malformed(
                line,
                &format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        check_id(line, fields[0], "image id")?;
        check_id(line, fields[1], "text id")?;
        out.push(Pair::new(fields[0], fields[1]));
    }
    Ok(out)
}

pub fn encode_pairs(pairs: &[Pair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&p.image_id);
        s.push('\t');
        s.push_str(&p.text_id);
        s.push('\n');
    }
    s
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<Pair>, DataError> {
    parse_pairs(&read_text(path.as_ref())?)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[Pair]) -> Result<(), DataError> {
    write_file(path.as_ref(), encode_pairs(pairs).as_bytes())
}

pub fn parse_sts(text: &str) -> Result<Vec<StsPair>, DataError> {
    let mut out = Vec::new();
    for (line, l) in lines(text) {
        check_line(line, l)?;
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(
                line,
                &format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        check_id(line, fields[0], "first id")?;
        check_id(line, fields[1], "second id")?;
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| malformed(line, &format!("invalid score {:?}", fields[2])))?;
        if !score.is_finite() {
            return Err(malformed(line, "non-finite score"));
        }
        out.push(StsPair {
            a: fields[0].to_string(),
            b: fields[1].to_string(),
            score,
        });
    }
    Ok(out)
}

pub fn read_sts(path: impl AsRef<Path>) -> Result<Vec<StsPair>, DataError> {
    parse_sts(&read_text(path.as_ref())?)
}

/// Query id to relevant ids, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelevanceMap {
    entries: Vec<(String, Vec<String>)>,
    index: HashMap<String, usize>,
}

impl RelevanceMap {
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (q, rel)) in entries.iter().enumerate() {
            let line = i + 1;
            check_id(line, q, "query id")?;
            if rel.is_empty() {
                return Err(malformed(
                    line,
                    &format!("query {q:?} has an empty relevant set"),
                ));
            }
            let mut seen = HashSet::with_capacity(rel.len());
            for id in rel {
                check_id(line, id, "relevant id")?;
                if id.contains(',') || id.contains('\t') || id.contains('\n') {
                    return Err(malformed(line, &format!("id {id:?} contains a separator")));
                }
                if !seen.insert(id.as_str()) {
                    return Err(malformed(line, &format!("relevant id {id:?} repeated")));
                }
            }
            if q.contains('\t') || q.contains('\n') {
                return Err(malformed(
                    line,
                    &format!("query id {q:?} contains a separator"),
                ));
            }
            if index.insert(q.clone(), i).is_some() {
                return Err(malformed(line, &format!("query {q:?} listed twice")));
            }
        }
        Ok(Self { entries, index })
    }

    /// Relevance implied by a pairs list: every paired text for an image and
    /// every paired image for a text. Returns `(i2t, t2i)`.
    pub fn cross_from_pairs(pairs: &[Pair]) -> (Self, Self) {
        fn group<'a>(it: impl Iterator<Item = (&'a str, &'a str)>) -> Vec<(String, Vec<String>)> {
            let mut order: Vec<(String, Vec<String>)> = Vec::new();
            let mut at: HashMap<&str, usize> = HashMap::new();
            let mut seen: HashSet<(&str, &str)> = HashSet::new();
            for (q, g) in it {
                if !seen.insert((q, g)) {
                    continue;
                }
                let i = *at.entry(q).or_insert_with(|| {
                    order.push((q.to_string(), Vec::new()));
                    order.len() - 1
                });
                order[i].1.push(g.to_string());
            }
            order
        }
        let i2t = group(
            pairs
                .iter()
                .map(|p| (p.image_id.as_str(), p.text_id.as_str())),
        );
        let t2i = group(
            pairs
                .iter()
                .map(|p| (p.text_id.as_str(), p.image_id.as_str())),
        );
        let index = |e: &[(String, Vec<String>)]| {
            e.iter()
                .enumerate()
                .map(|(i, (q, _))| (q.clone(), i))
                .collect::<HashMap<_, _>>()
        };
        (
            Self {
                index: index(&i2t),
                entries: i2t,
            },
            Self {
                index: index(&t2i),
                entries: t2i,
            },
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec<String>)] {
        &self.entries
    }

    pub fn get(&self, query: &str) -> Option<&[String]> {
        self.index.get(query).map(|&i| self.entries[i].1.as_slice())
    }

    /// The reverse relation: every relevant id becomes a query listing the
    /// queries that named it. Order follows first appearance.
    pub fn transpose(&self) -> Self {
        let mut entries: Vec<(String, Vec<String>)> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (q, rel) in &self.entries {
            for g in rel {
                let i = *index.entry(g.clone()).or_insert_with(|| {
                    entries.push((g.clone(), Vec::new()));
                    entries.len() - 1
                });
                entries[i].1.push(q.clone());
            }
        }
        Self { entries, index }
    }

    /// Entries whose query is one of `ids`, in the original order.
    pub fn restrict_queries(&self, ids: &[String]) -> Self {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let entries: Vec<(String, Vec<String>)> = self
            .entries
            .iter()
            .filter(|(q, _)| keep.contains(q.as_str()))
            .cloned()
            .collect();
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (q, _))| (q.clone(), i))
            .collect();
        Self { entries, index }
    }

    /// Checks that every query and relevant id exists in at least one of `tables`.
    pub fn validate_ids(&self, tables: &[&FeatureTable]) -> Result<(), DataError> {
        let known = |id: &str| tables.iter().any(|t| t.contains(id));
        for (i, (q, rel)) in self.entries.iter().enumerate() {
            for id in std::iter::once(q).chain(rel) {
                if !known(id) {
                    return Err(DataError::UnknownId {
                        id: id.clone(),
                        line: i + 1,
                    });
                }
            }
        }
        Ok(())
    }

    /// Maps ids to row indices. Queries must exist in `queries`; relevant ids
    /// not present in `gallery` are skipped, so one file can list both
    /// modalities. A query left with no gallery item is an error.
    pub fn resolve(
        &self,
        queries: &FeatureTable,
        gallery: &FeatureTable,
    ) -> Result<RetrievalRelevance, DataError> {
        let mut query_rows = Vec::with_capacity(self.len());
        let mut relevant = Vec::with_capacity(self.len());
        for (i, (q, rel)) in self.entries.iter().enumerate() {
            let qi = queries.index_of(q).ok_or_else(|| DataError::UnknownId {
                id: q.clone(),
                line: i + 1,
            })?;
            let set: Vec<usize> = rel.iter().filter_map(|id| gallery.index_of(id)).collect();
            if set.is_empty() {
                return Err(DataError::NoRelevant(q.clone()));
            }
            query_rows.push(qi);
            relevant.push(set);
        }
        RetrievalRelevance::new(query_rows, relevant, gallery.len())
            .map_err(|e| DataError::InvalidTable(e.to_string()))
    }
}

pub fn parse_relevance(text: &str) -> Result<RelevanceMap, DataError> {
    let mut entries = Vec::new();
    for (line, l) in lines(text) {
        check_line(line, l)?;
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 2 {
            return Err(malformed(
                line,
                &format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let rel: Vec<String> = fields[1].split(',').map(str::to_string).collect();
        if rel.iter().any(String::is_empty) {
            return Err(malformed(line, "empty id in relevant list"));
        }
        entries.push((fields[0].to_string(), rel));
    }
    RelevanceMap::new(entries)
}

pub fn encode_relevance(map: &RelevanceMap) -> String {
    let mut s = String::new();
    for (q, rel) in &map.entries {
        s.push_str(q);
        s.push('\t');
        s.push_str(&rel.join(","));
        s.push('\n');
    }
    s
}

pub fn read_relevance(path: impl AsRef<Path>) -> Result<RelevanceMap, DataError> {
    parse_relevance(&read_text(path.as_ref())?)
}

pub fn write_relevance(path: impl AsRef<Path>, map: &RelevanceMap) -> Result<(), DataError> {
    write_file(path.as_ref(), encode_relevance(map).as_bytes())
}
