//! Attribute domains and integer-coded databases.
//!
//! A schema declares, for every attribute, the finite set of values it may
//! take. Categorical attributes list their levels; numeric attributes list
//! strictly increasing bin edges and are discretized into half-open bins
//! `[e_i, e_{i+1})`, the last bin closed on the right. When a schema entry opts
//! in with `"allow_missing": true`, the reserved level [`MISSING_LEVEL`] is
//! appended and empty cells map to it.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved level for missing cells.
pub const MISSING_LEVEL: &str = "__NA__";

/// Bin count used when a numeric attribute gives a `range` but no `bins`.
pub const DEFAULT_AUTO_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub enum DomainKind {
    Categorical { levels: Vec<String> },
    Numeric { bin_edges: Vec<f64> },
}

/// The value space of one attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAttribute", into = "RawAttribute")]
pub struct AttributeDomain {
    name: String,
    kind: DomainKind,
    allow_missing: bool,
}

impl AttributeDomain {
    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        Self::new(
            name.into(),
            DomainKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
            false,
        )
    }

    pub fn numeric(name: impl Into<String>, bin_edges: Vec<f64>) -> Result<Self> {
        Self::new(name.into(), DomainKind::Numeric { bin_edges }, false)
    }

    /// `bins` equal-width bins covering `[lo, hi]`.
    pub fn equal_width(name: impl Into<String>, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let name = name.into();
        if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!(
                "{name}: equal-width binning needs lo < hi and at least one bin"
            )));
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
        edges.push(hi);
        Self::numeric(name, edges)
    }

    pub fn with_missing(mut self, allow: bool) -> Self {
        self.allow_missing = allow;
        self
    }

    fn new(name: String, kind: DomainKind, allow_missing: bool) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::Domain("attribute name is empty".into()));
        }
        match &kind {
            DomainKind::Categorical { levels } => {
                if levels.is_empty() {
                    return Err(Error::Domain(format!("{name}: no levels declared")));
                }
                let mut seen = HashSet::new();
                for l in levels {
                    if l == MISSING_LEVEL {
                        return Err(Error::Domain(format!(
                            "{name}: level {MISSING_LEVEL} is reserved"
                        )));
                    }
                    if !seen.insert(l.as_str()) {
                        return Err(Error::Domain(format!("{name}: duplicate level {l:?}")));
                    }
                }
            }
            DomainKind::Numeric { bin_edges } => {
                if bin_edges.len() < 2 {
                    return Err(Error::Domain(format!("{name}: need at least two bin edges")));
                }
                if bin_edges.iter().any(|e| !e.is_finite()) {
                    return Err(Error::Domain(format!("{name}: bin edges must be finite")));
                }
                if bin_edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Domain(format!(
                        "{name}: bin edges must be strictly increasing"
                    )));
                }
            }
        }
        Ok(Self {
            name,
            kind,
            allow_missing,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn allows_missing(&self) -> bool {
        self.allow_missing
    }

    /// Number of declared values, excluding the missing level.
    fn declared(&self) -> usize {
        match &self.kind {
            DomainKind::Categorical { levels } => levels.len(),
            DomainKind::Numeric { bin_edges } => bin_edges.len() - 1,
        }
    }

    /// `|σ(A)|`, including the missing level when enabled.
    pub fn cardinality(&self) -> usize {
        self.declared() + usize::from(self.allow_missing)
    }

    fn missing_code(&self) -> Option<u32> {
        self.allow_missing.then(|| self.declared() as u32)
    }

    /// Human-readable label of a code: the level itself, `lo..hi` for bins.
    pub fn label(&self, code: u32) -> String {
        let c = code as usize;
        if Some(code) == self.missing_code() {
            return MISSING_LEVEL.to_string();
        }
        match &self.kind {
            DomainKind::Categorical { levels } => levels[c].clone(),
            DomainKind::Numeric { bin_edges } => {
                format!("{}..{}", bin_edges[c], bin_edges[c + 1])
            }
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.cardinality() as u32).map(|c| self.label(c)).collect()
    }

    /// Code of a raw cell.
    ///
    /// Numeric cells accept either a number or a bin label as produced by
    /// [`AttributeDomain::label`], so synthetic CSVs re-encode.
    pub fn encode(&self, raw: &str) -> Result<u32> {
        let cell = raw.trim();
        if cell == MISSING_LEVEL || (cell.is_empty() && self.allow_missing) {
            return self.missing_code().ok_or_else(|| self.unknown(raw));
        }
        match &self.kind {
            DomainKind::Categorical { levels } => levels
                .iter()
                .position(|l| l == cell)
                .map(|i| i as u32)
                .ok_or_else(|| self.unknown(raw)),
            DomainKind::Numeric { bin_edges } => match cell.parse::<f64>() {
                Ok(v) if v.is_nan() => Err(self.unknown(raw)),
                Ok(v) => self.bin_of(bin_edges, v),
                Err(_) => (0..self.declared() as u32)
                    .find(|&c| self.label(c) == cell)
                    .ok_or_else(|| self.unknown(raw)),
            },
        }
    }

    fn bin_of(&self, edges: &[f64], v: f64) -> Result<u32> {
        let lo = edges[0];
        let hi = edges[edges.len() - 1];
        if v < lo || v > hi {
            return Err(Error::OutOfRange {
                attribute: self.name.clone(),
                value: v,
                lo,
                hi,
            });
        }
        let bins = edges.len() - 1;
        // number of interior edges <= v
        let idx = edges[1..bins].partition_point(|&e| e <= v);
        Ok(idx as u32)
    }

    fn unknown(&self, raw: &str) -> Error {
        Error::UnknownValue {
            attribute: self.name.clone(),
            value: raw.to_string(),
        }
    }
}

/// Schema-file form of an attribute.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttribute {
    name: String,
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bin_edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bins: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    allow_missing: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    Categorical,
    Numeric,
}

impl TryFrom<RawAttribute> for AttributeDomain {
    type Error = Error;

    fn try_from(raw: RawAttribute) -> Result<Self> {
        let name = raw.name;
        let domain = match raw.kind {
            RawKind::Categorical => {
                let levels = raw
                    .levels
                    .ok_or_else(|| Error::Domain(format!("{name}: categorical needs levels")))?;
                if raw.bin_edges.is_some() || raw.range.is_some() {
                    return Err(Error::Domain(format!(
                        "{name}: categorical attributes take levels only"
                    )));
                }
                AttributeDomain::categorical(name, levels)?
            }
            RawKind::Numeric => match (raw.bin_edges, raw.range) {
                (Some(edges), None) => AttributeDomain::numeric(name, edges)?,
                (None, Some([lo, hi])) => {
                    AttributeDomain::equal_width(name, lo, hi, raw.bins.unwrap_or(DEFAULT_AUTO_BINS))?
                }
                _ => {
                    return Err(Error::Domain(format!(
                        "{name}: numeric needs exactly one of bin_edges or range"
                    )))
                }
            },
        };
        Ok(domain.with_missing(raw.allow_missing))
    }
}

impl From<AttributeDomain> for RawAttribute {
    fn from(d: AttributeDomain) -> Self {
        let (kind, levels, bin_edges) = match d.kind {
            DomainKind::Categorical { levels } => (RawKind::Categorical, Some(levels), None),
            DomainKind::Numeric { bin_edges } => (RawKind::Numeric, None, Some(bin_edges)),
        };
        RawAttribute {
            name: d.name,
            kind,
            levels,
            bin_edges,
            range: None,
            bins: None,
            allow_missing: d.allow_missing,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    attributes: Vec<AttributeDomain>,
}

/// Parse a schema document and validate it.
pub fn parse_schema(text: &str) -> Result<Vec<AttributeDomain>> {
    let file: SchemaFile = serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            // domain validation errors surface through serde as data errors
            Error::Domain(e.to_string())
        } else {
            Error::Parse(e.to_string())
        }
    })?;
    check_unique_names(&file.attributes)?;
    if file.attributes.is_empty() {
        return Err(Error::Domain("schema declares no attributes".into()));
    }
    Ok(file.attributes)
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Vec<AttributeDomain>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema(&text)
}

pub fn schema_to_json(domains: &[AttributeDomain]) -> Result<String> {
    let file = SchemaFile {
        attributes: domains.to_vec(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

fn check_unique_names(domains: &[AttributeDomain]) -> Result<()> {
    let mut seen = HashSet::new();
    for d in domains {
        if !seen.insert(d.name()) {
            return Err(Error::Domain(format!("duplicate attribute {:?}", d.name())));
        }
    }
    Ok(())
}

/// Comparison applied to a raw CSV cell before encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum FilterOp {
    Eq { value: String },
    Neq { value: String },
    InSet { values: Vec<String> },
    Lt { value: f64 },
    Ge { value: f64 },
}

/// Keeps the rows whose `column` satisfies `op`. The column need not be part
/// of the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    #[serde(flatten)]
    pub op: FilterOp,
}

impl RowFilter {
    fn keep(&self, cell: &str) -> bool {
        let cell = cell.trim();
        match &self.op {
            FilterOp::Eq { value } => cell == value,
            FilterOp::Neq { value } => cell != value,
            FilterOp::InSet { values } => values.iter().any(|v| v == cell),
            FilterOp::Lt { value } => cell.parse::<f64>().is_ok_and(|x| x < *value),
            FilterOp::Ge { value } => cell.parse::<f64>().is_ok_and(|x| x >= *value),
        }
    }
}

/// Integer-coded rows over an ordered list of domains.
///
/// Codes are stored row-major; `codes[r * width + a]` is row `r`'s code for
/// attribute `a`, always below that attribute's cardinality.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDatabase {
    domains: Vec<AttributeDomain>,
    codes: Vec<u32>,
    rows: usize,
}

impl EncodedDatabase {
    pub fn new(domains: Vec<AttributeDomain>, codes: Vec<u32>) -> Result<Self> {
        check_unique_names(&domains)?;
        let width = domains.len();
        if width == 0 {
            if !codes.is_empty() {
                return Err(Error::ShapeMismatch("codes given without attributes".into()));
            }
            return Ok(Self {
                domains,
                codes,
                rows: 0,
            });
        }
        if !codes.len().is_multiple_of(width) {
            return Err(Error::ShapeMismatch(format!(
                "{} codes do not fill rows of width {width}",
                codes.len()
            )));
        }
        for (i, &c) in codes.iter().enumerate() {
            let d = &domains[i % width];
            if c as usize >= d.cardinality() {
                return Err(Error::Domain(format!(
                    "row {} has code {c} outside {} (cardinality {})",
                    i / width,
                    d.name(),
                    d.cardinality()
                )));
            }
        }
        let rows = codes.len() / width;
        Ok(Self {
            domains,
            codes,
            rows,
        })
    }

    pub fn from_rows(domains: Vec<AttributeDomain>, rows: &[Vec<u32>]) -> Result<Self> {
        let width = domains.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::LengthMismatch {
                expected: width,
                actual: bad.len(),
            });
        }
        Self::new(domains, rows.concat())
    }

    pub fn empty(domains: Vec<AttributeDomain>) -> Result<Self> {
        Self::new(domains, Vec::new())
    }

    pub fn domains(&self) -> &[AttributeDomain] {
        &self.domains
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn attribute_count(&self) -> usize {
        self.domains.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.domains.iter().map(AttributeDomain::cardinality).collect()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name() == name)
    }

    pub fn row(&self, r: usize) -> &[u32] {
        let w = self.domains.len();
        &self.codes[r * w..(r + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> + '_ {
        // chunks_exact(0) panics; a zero-width table has no rows anyway
        self.codes.chunks_exact(self.domains.len().max(1))
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    /// Write the rows as CSV using level labels (bins as `lo..hi`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.domains.iter().map(AttributeDomain::name))?;
        let labels: Vec<Vec<String>> = self.domains.iter().map(AttributeDomain::labels).collect();
        for row in self.rows() {
            w.write_record(row.iter().zip(&labels).map(|(&c, l)| l[c as usize].as_str()))?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Encode CSV text from any reader. Columns not named in the schema are
/// ignored; when a header repeats, the first occurrence wins.
pub fn encode_reader<R: Read>(
    input: R,
    domains: &[AttributeDomain],
    filters: &[RowFilter],
) -> Result<EncodedDatabase> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let columns: Vec<usize> = domains.iter().map(|d| find(d.name())).collect::<Result<_>>()?;
    let filter_columns: Vec<usize> = filters
        .iter()
        .map(|f| find(&f.column))
        .collect::<Result<_>>()?;

    let mut codes = Vec::new();
    for record in reader.records() {
        let record = record?;
        let keep = filters
            .iter()
            .zip(&filter_columns)
            .all(|(f, &c)| f.keep(record.get(c).unwrap_or("")));
        if !keep {
            continue;
        }
        for (d, &c) in domains.iter().zip(&columns) {
            codes.push(d.encode(record.get(c).unwrap_or(""))?);
        }
    }
    EncodedDatabase::new(domains.to_vec(), codes)
}

pub fn encode_csv(path: impl AsRef<Path>, domains: &[AttributeDomain]) -> Result<EncodedDatabase> {
    encode_csv_filtered(path, domains, &[])
}

pub fn encode_csv_filtered(
    path: impl AsRef<Path>,
    domains: &[AttributeDomain],
    filters: &[RowFilter],
) -> Result<EncodedDatabase> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    encode_reader(std::io::BufReader::new(file), domains, filters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sex_race_schema() -> &'static str {
        r#"{"attributes":[
            {"name":"sex","kind":"categorical","levels":["Male","Female"]},
            {"name":"race","kind":"categorical","levels":["White","Black"]}
        ]}"#
    }

    fn age() -> AttributeDomain {
        AttributeDomain::numeric("age", vec![0.0, 25.0, 45.0, 120.0]).unwrap()
    }

    #[test]
    fn categorical_schema_cardinalities() {
        let d = parse_schema(sex_race_schema()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].cardinality(), 2);
        assert_eq!(d[1].cardinality(), 2);
    }

    #[test]
    fn numeric_schema_cardinality() {
        let d = parse_schema(
            r#"{"attributes":[{"name":"age","kind":"numeric","bin_edges":[0,25,45,120]}]}"#,
        )
        .unwrap();
        assert_eq!(d[0].cardinality(), 3);
    }

    #[test]
    fn duplicate_attribute_is_domain_error() {
        let err = parse_schema(
            r#"{"attributes":[
                {"name":"sex","kind":"categorical","levels":["M","F"]},
                {"name":"sex","kind":"categorical","levels":["M","F"]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn bad_domains_rejected() {
        for text in [
            r#"{"attributes":[{"name":"a","kind":"categorical","levels":[]}]}"#,
            r#"{"attributes":[{"name":"a","kind":"numeric","bin_edges":[0,5,5]}]}"#,
            r#"{"attributes":[{"name":"a","kind":"categorical","levels":["x","x"]}]}"#,
        ] {
            assert!(matches!(parse_schema(text), Err(Error::Domain(_))), "{text}");
        }
        assert!(matches!(parse_schema("{not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn auto_bins_default_to_ten() {
        let d = parse_schema(r#"{"attributes":[{"name":"x","kind":"numeric","range":[0,1]}]}"#)
            .unwrap();
        assert_eq!(d[0].cardinality(), DEFAULT_AUTO_BINS);
        assert_eq!(d[0].encode("1").unwrap(), 9);
        assert_eq!(d[0].encode("0.05").unwrap(), 0);
    }

    #[test]
    fn encodes_first_levels_as_zero() {
        let d = parse_schema(sex_race_schema()).unwrap();
        let db = encode_reader("sex,race\nMale,White\n".as_bytes(), &d, &[]).unwrap();
        assert_eq!(db.row(0), &[0, 0]);
    }

    #[test]
    fn half_open_bins_last_closed() {
        let a = age();
        assert_eq!(a.encode("0").unwrap(), 0);
        assert_eq!(a.encode("24.999").unwrap(), 0);
        assert_eq!(a.encode("25").unwrap(), 1);
        assert_eq!(a.encode("45").unwrap(), 2);
        assert_eq!(a.encode("120").unwrap(), 2);
        assert!(matches!(a.encode("150"), Err(Error::OutOfRange { .. })));
        assert!(matches!(a.encode("-1"), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn bin_labels_re_encode() {
        let a = age();
        for c in 0..3 {
            assert_eq!(a.encode(&a.label(c)).unwrap(), c);
        }
        assert_eq!(a.label(1), "25..45");
    }

    #[test]
    fn unknown_level_and_missing_column() {
        let d = parse_schema(sex_race_schema()).unwrap();
        let err = encode_reader("sex,race\nOther,White\n".as_bytes(), &d, &[]).unwrap_err();
        assert!(matches!(err, Error::UnknownValue { .. }));
        let err = encode_reader("sex\nMale\n".as_bytes(), &d, &[]).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "race"));
    }

    #[test]
    fn missing_values_need_opt_in() {
        let strict = AttributeDomain::categorical("c", ["a", "b"]).unwrap();
        assert!(strict.encode("").is_err());
        let lax = strict.clone().with_missing(true);
        assert_eq!(lax.cardinality(), 3);
        assert_eq!(lax.encode("").unwrap(), 2);
        assert_eq!(lax.label(2), MISSING_LEVEL);
        let num = age().with_missing(true);
        assert_eq!(num.encode(" ").unwrap(), 3);
    }

    #[test]
    fn extra_and_duplicate_columns() {
        let d = parse_schema(sex_race_schema()).unwrap();
        let text = "id,race,sex,race\n1,Black,Female,White\n";
        let db = encode_reader(text.as_bytes(), &d, &[]).unwrap();
        assert_eq!(db.row(0), &[1, 1]);
    }

    #[test]
    fn row_filter_on_raw_columns() {
        let d = parse_schema(sex_race_schema()).unwrap();
        let text = "sex,race,days\nMale,White,3\nFemale,Black,40\nFemale,White,-2\n";
        let filters = vec![RowFilter {
            column: "days".into(),
            op: FilterOp::Lt { value: 30.0 },
        }];
        let db = encode_reader(text.as_bytes(), &d, &filters).unwrap();
        assert_eq!(db.row_count(), 2);
        assert_eq!(db.row(1), &[1, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let domains = vec![
            AttributeDomain::categorical("sex", ["Male", "Female"]).unwrap(),
            age(),
        ];
        let text = "sex,age\nFemale,30\nMale,0\nMale,120\n";
        let db = encode_reader(text.as_bytes(), &domains, &[]).unwrap();
        let mut out = Vec::new();
        db.write_csv(&mut out).unwrap();
        let written = String::from_utf8(out.clone()).unwrap();
        assert_eq!(written, "sex,age\nFemale,25..45\nMale,0..25\nMale,45..120\n");
        let again = encode_reader(out.as_slice(), &domains, &[]).unwrap();
        assert_eq!(again, db);
    }

    #[test]
    fn domain_serde_round_trip() {
        let d = vec![age().with_missing(true)];
        let json = schema_to_json(&d).unwrap();
        assert_eq!(parse_schema(&json).unwrap(), d);
    }

    #[test]
    fn rejects_out_of_domain_codes() {
        let d = vec![AttributeDomain::categorical("c", ["a", "b"]).unwrap()];
        assert!(EncodedDatabase::new(d, vec![0, 2]).is_err());
    }
}
