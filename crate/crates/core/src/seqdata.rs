//! Sequence alignments: FASTA and NEXUS readers, site-pattern compression and
//! pairwise Hamming distances.
//!
//! Characters are stored as 4-bit state sets (`A=1, C=2, G=4, T=8`). Gaps,
//! `?` and `N` are fully missing (all four bits); IUPAC codes map to their
//! subsets.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::DistanceMatrix;

/// Nucleotide state order used for partial likelihood vectors.
pub const STATES: [u8; 4] = [b'A', b'C', b'G', b'T'];

/// Bit pattern of a fully missing character.
pub const MISSING: u8 = 0b1111;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("input contains no sequences")]
    Empty,
    #[error("line {line}: sequence data before the first '>' header")]
    MissingHeader { line: usize },
    #[error("line {line}: empty taxon name")]
    EmptyName { line: usize },
    #[error("line {line}: character '{ch}' is not a DNA or IUPAC ambiguity code")]
    InvalidChar { line: usize, ch: char },
    #[error("duplicate taxon name '{0}'")]
    DuplicateTaxon(String),
    #[error("taxon '{taxon}' has {found} sites, expected {expected}")]
    LengthMismatch {
        taxon: String,
        expected: usize,
        found: usize,
    },
    #[error("an alignment needs at least 3 taxa, found {0}")]
    TooFewTaxa(usize),
    #[error("alignment has no sites")]
    NoSites,
    #[error("NEXUS: no MATRIX command inside a DATA or CHARACTERS block")]
    MissingMatrix,
    #[error("NEXUS: declared ntax={declared} but the matrix holds {found} taxa")]
    NtaxMismatch { declared: usize, found: usize },
    #[error("NEXUS: declared nchar={declared} but taxon '{taxon}' has {found} characters")]
    NcharMismatch {
        declared: usize,
        taxon: String,
        found: usize,
    },
    #[error("NEXUS line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("taxa '{a}' and '{b}' share no unambiguous sites")]
    NoComparableSites { a: String, b: String },
    #[error("pattern {pattern} has {found} entries for {expected} taxa")]
    PatternShape {
        pattern: usize,
        expected: usize,
        found: usize,
    },
}

/// Maps an (uppercase) alignment character to its 4-bit state set.
pub fn encode_base(ch: u8) -> Option<u8> {
    let bits = match ch {
        b'A' => 0b0001,
        b'C' => 0b0010,
        b'G' => 0b0100,
        b'T' => 0b1000,
        b'R' => 0b0101,
        b'Y' => 0b1010,
        b'S' => 0b0110,
        b'W' => 0b1001,
        b'K' => 0b1100,
        b'M' => 0b0011,
        b'B' => 0b1110,
        b'D' => 0b1101,
        b'H' => 0b1011,
        b'V' => 0b0111,
        b'N' | b'?' | b'-' => MISSING,
        _ => return None,
    };
    Some(bits)
}

/// True when the state set names exactly one nucleotide.
#[inline]
pub fn is_unambiguous(bits: u8) -> bool {
    bits.count_ones() == 1
}

/// An aligned set of DNA sequences, rows in taxon order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    taxa: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl Alignment {
    /// Validates and builds an alignment. Characters are uppercased.
    pub fn new(taxa: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self, SeqError> {
        if taxa.is_empty() {
            return Err(SeqError::Empty);
        }
        let taxa: Vec<String> = taxa.into_iter().map(|t| t.trim().to_string()).collect();
        let mut seen = HashMap::new();
        for (i, name) in taxa.iter().enumerate() {
            if name.is_empty() {
                return Err(SeqError::EmptyName { line: i + 1 });
            }
            if seen.insert(name.clone(), i).is_some() {
                return Err(SeqError::DuplicateTaxon(name.clone()));
            }
        }
        let rows: Vec<Vec<u8>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|c| c.to_ascii_uppercase()).collect())
            .collect();
        if rows.len() != taxa.len() {
            return Err(SeqError::Malformed {
                line: 0,
                msg: format!("{} names but {} sequences", taxa.len(), rows.len()),
            });
        }
        let expected = rows[0].len();
        for (name, row) in taxa.iter().zip(&rows) {
            if row.len() != expected {
                return Err(SeqError::LengthMismatch {
                    taxon: name.clone(),
                    expected,
                    found: row.len(),
                });
            }
            if let Some(&bad) = row.iter().find(|&&c| encode_base(c).is_none()) {
                return Err(SeqError::InvalidChar {
                    line: 0,
                    ch: bad as char,
                });
            }
        }
        if taxa.len() < 3 {
            return Err(SeqError::TooFewTaxa(taxa.len()));
        }
        if expected == 0 {
            return Err(SeqError::NoSites);
        }
        Ok(Self { taxa, rows })
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn taxon_count(&self) -> usize {
        self.taxa.len()
    }

    pub fn site_count(&self) -> usize {
        self.rows[0].len()
    }

    /// Writes the alignment as FASTA, 60 columns per line.
    pub fn to_fasta(&self) -> String {
        let mut out = String::new();
        for (name, row) in self.taxa.iter().zip(&self.rows) {
            out.push('>');
            out.push_str(name);
            out.push('\n');
            for chunk in row.chunks(60) {
                out.push_str(std::str::from_utf8(chunk).expect("alignment rows are ASCII"));
                out.push('\n');
            }
        }
        out
    }
}

/// Parses FASTA text. Blank lines and lines starting with `#` or `;` are ignored.
pub fn parse_fasta(bytes: &[u8]) -> Result<Alignment, SeqError> {
    let text = String::from_utf8_lossy(bytes);
    let mut taxa: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.trim();
            if name.is_empty() {
                return Err(SeqError::EmptyName { line: line_no });
            }
            if taxa.iter().any(|t| t == name) {
                return Err(SeqError::DuplicateTaxon(name.to_string()));
            }
            taxa.push(name.to_string());
            rows.push(Vec::new());
            continue;
        }
        let Some(row) = rows.last_mut() else {
            return Err(SeqError::MissingHeader { line: line_no });
        };
        for ch in line.bytes().filter(|c| !c.is_ascii_whitespace()) {
            let up = ch.to_ascii_uppercase();
            if encode_base(up).is_none() {
                return Err(SeqError::InvalidChar {
                    line: line_no,
                    ch: ch as char,
                });
            }
            row.push(up);
        }
    }
    if taxa.is_empty() {
        return Err(SeqError::Empty);
    }
    Alignment::new(taxa, rows)
}

/// Reads either format, choosing NEXUS when the text begins with `#NEXUS`.
pub fn parse_alignment(bytes: &[u8]) -> Result<Alignment, SeqError> {
    let text = String::from_utf8_lossy(bytes);
    let first = text.lines().map(str::trim).find(|l| !l.is_empty());
    match first {
        Some(l) if l.to_ascii_uppercase().starts_with("#NEXUS") => parse_nexus_matrix(bytes),
        _ => parse_fasta(bytes),
    }
}

/// Replaces bracketed NEXUS comments with spaces, keeping newlines so that line
/// numbers survive.
fn strip_nexus_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    let mut in_quote = false;
    for ch in text.chars() {
        match ch {
            '\'' if depth == 0 => {
                in_quote = !in_quote;
                out.push(ch);
            }
            '[' if !in_quote => {
                depth += 1;
                out.push(' ');
            }
            ']' if !in_quote && depth > 0 => {
                depth -= 1;
                out.push(' ');
            }
            '\n' => out.push('\n'),
            _ if depth > 0 => out.push(' '),
            _ => out.push(ch),
        }
    }
    out
}

/// Splits a matrix row into whitespace-separated tokens, honouring single quotes.
fn nexus_tokens(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut tok = String::new();
        if c == '\'' {
            chars.next();
            while let Some(c) = chars.next() {
                if c == '\'' {
                    if chars.peek() == Some(&'\'') {
                        tok.push('\'');
                        chars.next();
                    } else {
                        break;
                    }
                } else {
                    tok.push(c);
                }
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                tok.push(c);
                chars.next();
            }
        }
        tokens.push(tok);
    }
    tokens
}

/// Value of `key=value` inside a command, case-insensitive on the key.
fn nexus_setting(command: &str, key: &str) -> Option<String> {
    let lower = command.to_ascii_lowercase();
    let mut search = 0;
    while let Some(pos) = lower[search..].find(key) {
        let start = search + pos;
        let before_ok = start == 0
            || !lower.as_bytes()[start - 1].is_ascii_alphanumeric();
        let rest = lower[start + key.len()..].trim_start();
        if before_ok && rest.starts_with('=') {
            let offset = command.len() - rest.len() + 1;
            let value = command[offset..]
                .trim_start()
                .split(|c: char| c.is_whitespace() || c == ';')
                .next()
                .unwrap_or("")
                .trim_matches('"')
                .to_string();
            return Some(value);
        }
        search = start + key.len();
    }
    None
}

fn has_flag(command: &str, flag: &str) -> bool {
    command
        .to_ascii_lowercase()
        .split(|c: char| c.is_whitespace() || c == '=')
        .any(|t| t == flag)
}

/// Parses the MATRIX of the first DATA or CHARACTERS block of a NEXUS file.
pub fn parse_nexus_matrix(bytes: &[u8]) -> Result<Alignment, SeqError> {
    let text = strip_nexus_comments(&String::from_utf8_lossy(bytes));
    let lower = text.to_ascii_lowercase();

    let block_start = ["begin data", "begin characters"]
        .iter()
        .filter_map(|pat| lower.find(pat))
        .min()
        .ok_or(SeqError::MissingMatrix)?;
    let block = &text[block_start..];
    let block_lower = &lower[block_start..];
    let line_offset = text[..block_start].matches('\n').count();

    let mut ntax = None;
    let mut nchar = None;
    let mut interleave = false;
    let mut gap = b'-';
    let mut missing = b'?';
    let mut matchchar = None;
    let mut matrix = None;

    // Commands are ';'-terminated; the MATRIX body itself contains no ';'.
    let mut cursor = 0;
    while cursor < block.len() {
        let end = block[cursor..]
            .find(';')
            .map(|p| cursor + p)
            .unwrap_or(block.len());
        let command = &block[cursor..end];
        let command_lower = &block_lower[cursor..end];
        let trimmed = command_lower.trim_start();
        let keyword = trimmed.split_whitespace().next().unwrap_or("");
        match keyword {
            "end" | "endblock" => break,
            "dimensions" => {
                if let Some(v) = nexus_setting(command, "ntax") {
                    ntax = v.parse::<usize>().ok();
                }
                if let Some(v) = nexus_setting(command, "nchar") {
                    nchar = v.parse::<usize>().ok();
                }
            }
            "format" => {
                if has_flag(command, "interleave") {
                    interleave = nexus_setting(command, "interleave")
                        .map(|v| !v.eq_ignore_ascii_case("no"))
                        .unwrap_or(true);
                }
                if let Some(v) = nexus_setting(command, "gap") {
                    gap = v.bytes().next().unwrap_or(b'-');
                }
                if let Some(v) = nexus_setting(command, "missing") {
                    missing = v.bytes().next().unwrap_or(b'?');
                }
                if let Some(v) = nexus_setting(command, "matchchar") {
                    matchchar = v.bytes().next();
                }
            }
            "matrix" => {
                let lead = command.len() - trimmed.len();
                let body_start = cursor + lead + "matrix".len();
                let first_line = line_offset + text[block_start..block_start + body_start]
                    .matches('\n')
                    .count()
                    + 1;
                matrix = Some((&block[body_start..end], first_line));
            }
            _ => {}
        }
        cursor = end + 1;
    }

    let (body, first_line) = matrix.ok_or(SeqError::MissingMatrix)?;
    let mut names: Vec<String> = Vec::new();
    let mut seqs: Vec<Vec<u8>> = Vec::new();
    let mut current: Option<usize> = None;
    for (i, line) in body.lines().enumerate() {
        let line_no = first_line + i;
        let tokens = nexus_tokens(line);
        if tokens.is_empty() {
            continue;
        }
        let continuation = !interleave
            && match (current, nchar) {
                (Some(c), Some(n)) => seqs[c].len() < n,
                _ => false,
            };
        let (target, seq_tokens) = if continuation {
            (current.expect("continuation implies a current taxon"), &tokens[..])
        } else {
            let name = tokens[0].trim().to_string();
            let idx = match names.iter().position(|n| *n == name) {
                Some(idx) if interleave => idx,
                Some(_) => return Err(SeqError::DuplicateTaxon(name)),
                None => {
                    names.push(name);
                    seqs.push(Vec::new());
                    names.len() - 1
                }
            };
            (idx, &tokens[1..])
        };
        for tok in seq_tokens {
            for ch in tok.bytes() {
                let mut up = ch.to_ascii_uppercase();
                if Some(ch) == matchchar {
                    let pos = seqs[target].len();
                    up = *seqs
                        .first()
                        .and_then(|s| s.get(pos))
                        .filter(|_| target != 0)
                        .ok_or_else(|| SeqError::Malformed {
                            line: line_no,
                            msg: "match character without a reference base".into(),
                        })?;
                } else if ch == gap {
                    up = b'-';
                } else if ch == missing {
                    up = b'?';
                }
                if encode_base(up).is_none() {
                    return Err(SeqError::InvalidChar {
                        line: line_no,
                        ch: ch as char,
                    });
                }
                seqs[target].push(up);
            }
        }
        current = Some(target);
    }

    if names.is_empty() {
        return Err(SeqError::MissingMatrix);
    }
    if let Some(declared) = ntax {
        if declared != names.len() {
            return Err(SeqError::NtaxMismatch {
                declared,
                found: names.len(),
            });
        }
    }
    if let Some(declared) = nchar {
        for (name, seq) in names.iter().zip(&seqs) {
            if seq.len() != declared {
                return Err(SeqError::NcharMismatch {
                    declared,
                    taxon: name.clone(),
                    found: seq.len(),
                });
            }
        }
    }
    Alignment::new(names, seqs)
}

/// Distinct site columns with multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternAlignment {
    taxa: Vec<String>,
    patterns: Vec<Vec<u8>>,
    weights: Vec<f64>,
}

impl PatternAlignment {
    /// Builds from explicit patterns (each an N-vector of 4-bit codes) and weights.
    pub fn from_parts(
        taxa: Vec<String>,
        patterns: Vec<Vec<u8>>,
        weights: Vec<f64>,
    ) -> Result<Self, SeqError> {
        for (p, pat) in patterns.iter().enumerate() {
            if pat.len() != taxa.len() {
                return Err(SeqError::PatternShape {
                    pattern: p,
                    expected: taxa.len(),
                    found: pat.len(),
                });
            }
        }
        assert_eq!(patterns.len(), weights.len(), "one weight per pattern");
        Ok(Self {
            taxa,
            patterns,
            weights,
        })
    }

    /// One pattern per site, weight 1 each, without pooling.
    pub fn uncompressed(a: &Alignment) -> Self {
        let n = a.taxon_count();
        let patterns = (0..a.site_count())
            .map(|s| (0..n).map(|t| encode_base(a.rows()[t][s]).unwrap()).collect())
            .collect::<Vec<Vec<u8>>>();
        let weights = vec![1.0; patterns.len()];
        Self {
            taxa: a.taxa().to_vec(),
            patterns,
            weights,
        }
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn taxon_count(&self) -> usize {
        self.taxa.len()
    }

    pub fn patterns(&self) -> &[Vec<u8>] {
        &self.patterns
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    /// Total number of sites represented (sum of weights).
    pub fn site_count(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Same patterns with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= factor);
        out
    }
}

/// Pools identical site columns, keeping first-occurrence order.
pub fn compress_site_patterns(a: &Alignment) -> PatternAlignment {
    let n = a.taxon_count();
    let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut patterns: Vec<Vec<u8>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for s in 0..a.site_count() {
        let column: Vec<u8> = (0..n)
            .map(|t| encode_base(a.rows()[t][s]).expect("validated alignment"))
            .collect();
        match index.get(&column) {
            Some(&p) => weights[p] += 1.0,
            None => {
                index.insert(column.clone(), patterns.len());
                patterns.push(column);
                weights.push(1.0);
            }
        }
    }
    PatternAlignment {
        taxa: a.taxa().to_vec(),
        patterns,
        weights,
    }
}

/// Proportion of mismatches over sites where both characters are unambiguous.
pub fn hamming_distance_matrix(a: &Alignment) -> Result<DistanceMatrix, SeqError> {
    pattern_distance_matrix(&compress_site_patterns(a))
}

/// [`hamming_distance_matrix`] computed from weighted site patterns.
pub fn pattern_distance_matrix(pa: &PatternAlignment) -> Result<DistanceMatrix, SeqError> {
    let n = pa.taxon_count();
    let mut d = DistanceMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut comparable = 0.0;
            let mut mismatches = 0.0;
            for (pat, &w) in pa.patterns().iter().zip(pa.weights()) {
                let (x, y) = (pat[i], pat[j]);
                if is_unambiguous(x) && is_unambiguous(y) {
                    comparable += w;
                    if x != y {
                        mismatches += w;
                    }
                }
            }
            if comparable == 0.0 {
                return Err(SeqError::NoComparableSites {
                    a: pa.taxa()[i].clone(),
                    b: pa.taxa()[j].clone(),
                });
            }
            d.set(i, j, mismatches / comparable);
        }
    }
    Ok(d)
}
