//! Case-control genotype matrices and the tab-separated on-disk format.
//!
//! ```text
//! #snp    rs1     rs2     rs3
//! #pos    1000    1500    2200
//! 1       0       1       2
//! 0       0       0       N
//! ```
//!
//! The first column of each data row is the phenotype (1 = case, 0 = control);
//! `N` marks a missing genotype. Canonical files list all cases before all
//! controls and end with a newline.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

const MISSING: u8 = u8::MAX;

/// What to do with `N` entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    #[default]
    Reject,
    /// Replace with the most frequent genotype at the SNP over both cohorts
    /// (ties go to the smaller code).
    ModeImpute,
}

/// Immutable genotype data for `n_cases` cases and `n_controls` controls.
///
/// Storage is column-major with cases first, so `column(j)` is one contiguous
/// slice over all individuals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenotypeDataset {
    snp_ids: Vec<String>,
    positions: Vec<u64>,
    n_cases: usize,
    n_controls: usize,
    genotypes: Vec<u8>,
}

impl GenotypeDataset {
    /// Builds a dataset from row-major case and control matrices.
    pub fn from_rows(
        snp_ids: Vec<String>,
        positions: Vec<u64>,
        cases: &[Vec<u8>],
        controls: &[Vec<u8>],
    ) -> Result<Self> {
        let n_snps = snp_ids.len();
        validate_metadata(&snp_ids, &positions).map_err(|(_, msg)| Error::invalid(msg))?;
        let n = cases.len() + controls.len();
        let mut genotypes = vec![0u8; n_snps * n];
        for (i, row) in cases.iter().chain(controls).enumerate() {
            if row.len() != n_snps {
                return Err(Error::invalid(format!(
                    "individual {i} has {} genotypes, expected {n_snps}",
                    row.len()
                )));
            }
            for (j, &g) in row.iter().enumerate() {
                if g > 2 {
                    return Err(Error::invalid(format!(
                        "genotype code {g} for individual {i} at SNP {j}"
                    )));
                }
                genotypes[j * n + i] = g;
            }
        }
        Ok(GenotypeDataset {
            snp_ids,
            positions,
            n_cases: cases.len(),
            n_controls: controls.len(),
            genotypes,
        })
    }

    pub(crate) fn from_columns(
        snp_ids: Vec<String>,
        positions: Vec<u64>,
        n_cases: usize,
        n_controls: usize,
        genotypes: Vec<u8>,
    ) -> Self {
        debug_assert_eq!(genotypes.len(), snp_ids.len() * (n_cases + n_controls));
        GenotypeDataset {
            snp_ids,
            positions,
            n_cases,
            n_controls,
            genotypes,
        }
    }

    pub fn n_snps(&self) -> usize {
        self.snp_ids.len()
    }

    pub fn n_cases(&self) -> usize {
        self.n_cases
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn n_individuals(&self) -> usize {
        self.n_cases + self.n_controls
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn positions(&self) -> &[u64] {
        &self.positions
    }

    /// Span of the region in base pairs, at least 1.
    pub fn region_length(&self) -> u64 {
        match (self.positions.first(), self.positions.last()) {
            (Some(first), Some(last)) => (last - first).max(1),
            _ => 1,
        }
    }

    /// Genotypes at SNP `snp` for all individuals, cases first.
    pub fn column(&self, snp: usize) -> &[u8] {
        let n = self.n_individuals();
        &self.genotypes[snp * n..(snp + 1) * n]
    }

    pub fn case_column(&self, snp: usize) -> &[u8] {
        &self.column(snp)[..self.n_cases]
    }

    pub fn control_column(&self, snp: usize) -> &[u8] {
        &self.column(snp)[self.n_cases..]
    }

    pub fn snp_index(&self, id: &str) -> Option<usize> {
        self.snp_ids.iter().position(|s| s == id)
    }

    /// Genotype counts (0, 1, 2) at one SNP for cases and for controls.
    pub fn column_counts(&self, snp: usize) -> Result<([usize; 3], [usize; 3])> {
        if snp >= self.n_snps() {
            return Err(Error::invalid(format!(
                "SNP index {snp} out of range for {} SNPs",
                self.n_snps()
            )));
        }
        let tally = |col: &[u8]| {
            let mut c = [0usize; 3];
            for &g in col {
                c[g as usize] += 1;
            }
            c
        };
        Ok((
            tally(self.case_column(snp)),
            tally(self.control_column(snp)),
        ))
    }

    /// Dataset restricted to the given SNPs, in the given order.
    pub fn select_snps(&self, snps: &[usize]) -> GenotypeDataset {
        let mut genotypes = Vec::with_capacity(snps.len() * self.n_individuals());
        for &j in snps {
            genotypes.extend_from_slice(self.column(j));
        }
        GenotypeDataset {
            snp_ids: snps.iter().map(|&j| self.snp_ids[j].clone()).collect(),
            positions: snps.iter().map(|&j| self.positions[j]).collect(),
            n_cases: self.n_cases,
            n_controls: self.n_controls,
            genotypes,
        }
    }

    /// Same individuals with case and control roles exchanged.
    pub fn swap_cohorts(&self) -> GenotypeDataset {
        let n = self.n_individuals();
        let mut genotypes = Vec::with_capacity(self.genotypes.len());
        for j in 0..self.n_snps() {
            let col = &self.genotypes[j * n..(j + 1) * n];
            genotypes.extend_from_slice(&col[self.n_cases..]);
            genotypes.extend_from_slice(&col[..self.n_cases]);
        }
        GenotypeDataset {
            snp_ids: self.snp_ids.clone(),
            positions: self.positions.clone(),
            n_cases: self.n_controls,
            n_controls: self.n_cases,
            genotypes,
        }
    }

    /// Removes SNPs that fail a 1-df chi-square Hardy–Weinberg test in controls
    /// (in all individuals when there are no controls) at `threshold`.
    /// Returns the filtered dataset and the indices that were dropped.
    pub fn hwe_filter(&self, threshold: f64) -> Result<(GenotypeDataset, Vec<usize>)> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!(
                "HWE threshold must be in (0,1), got {threshold}"
            )));
        }
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..self.n_snps() {
            let col = if self.n_controls > 0 {
                self.control_column(j)
            } else {
                self.column(j)
            };
            let mut c = [0usize; 3];
            for &g in col {
                c[g as usize] += 1;
            }
            if hwe_p_value(c) < threshold {
                dropped.push(j);
            } else {
                keep.push(j);
            }
        }
        if keep.is_empty() {
            return Err(Error::Constraint(
                "Hardy-Weinberg filter removed every SNP".into(),
            ));
        }
        Ok((self.select_snps(&keep), dropped))
    }

    /// Writes the canonical text form.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut line = String::from("#snp");
        for id in &self.snp_ids {
            line.push('\t');
            line.push_str(id);
        }
        writeln!(out, "{line}")?;
        line.clear();
        line.push_str("#pos");
        for p in &self.positions {
            let _ = write!(line, "\t{p}");
        }
        writeln!(out, "{line}")?;
        let n = self.n_individuals();
        for i in 0..n {
            line.clear();
            line.push(if i < self.n_cases { '1' } else { '0' });
            for j in 0..self.n_snps() {
                line.push('\t');
                line.push((b'0' + self.genotypes[j * n + i]) as char);
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_canonical_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("dataset text is ASCII or UTF-8 ids")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut w = io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn hwe_p_value(c: [usize; 3]) -> f64 {
    let n = (c[0] + c[1] + c[2]) as f64;
    if n == 0.0 {
        return 1.0;
    }
    let q = (2 * c[2] + c[1]) as f64 / (2.0 * n);
    let expected = [
        n * (1.0 - q) * (1.0 - q),
        2.0 * n * q * (1.0 - q),
        n * q * q,
    ];
    if expected.iter().any(|&e| e <= 0.0) {
        return 1.0;
    }
    let stat: f64 = c
        .iter()
        .zip(expected)
        .map(|(&o, e)| (o as f64 - e).powi(2) / e)
        .sum();
    let chi = ChiSquared::new(1.0).expect("df 1 is valid");
    1.0 - chi.cdf(stat)
}

fn validate_metadata(
    snp_ids: &[String],
    positions: &[u64],
) -> std::result::Result<(), (usize, String)> {
    if snp_ids.is_empty() {
        return Err((1, "no SNPs declared".into()));
    }
    if positions.len() != snp_ids.len() {
        return Err((
            2,
            format!(
                "{} positions for {} SNP ids",
                positions.len(),
                snp_ids.len()
            ),
        ));
    }
    let mut seen = HashSet::with_capacity(snp_ids.len());
    for id in snp_ids {
        if id.is_empty() {
            return Err((1, "empty SNP id".into()));
        }
        if !seen.insert(id.as_str()) {
            return Err((1, format!("duplicate SNP id {id:?}")));
        }
    }
    for (k, w) in positions.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err((
                2,
                format!(
                    "positions not strictly increasing at SNP {} ({} after {})",
                    k + 1,
                    w[1],
                    w[0]
                ),
            ));
        }
    }
    Ok(())
}

/// Reads a dataset file from disk.
pub fn load_dataset(path: impl AsRef<Path>, policy: MissingPolicy) -> Result<GenotypeDataset> {
    let file = fs::File::open(path)?;
    read_dataset(BufReader::new(file), policy)
}

/// Parses the text format from any reader.
pub fn read_dataset<R: Read>(reader: R, policy: MissingPolicy) -> Result<GenotypeDataset> {
    let reader = BufReader::new(reader);
    let mut snp_ids: Option<Vec<String>> = None;
    let mut positions: Option<Vec<u64>> = None;
    // Row-major with MISSING markers; reorganised once the shape is known.
    let mut case_rows: Vec<Vec<u8>> = Vec::new();
    let mut control_rows: Vec<Vec<u8>> = Vec::new();
    let mut row_lines: (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let head = fields.next().unwrap_or("");
        match (head, &snp_ids, &positions) {
            ("#snp", None, _) => {
                snp_ids = Some(fields.map(str::to_owned).collect());
            }
            ("#pos", Some(_), None) => {
                let pos = fields
                    .map(|f| {
                        f.trim()
                            .parse::<u64>()
                            .map_err(|_| Error::parse(lineno, format!("invalid position {f:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                positions = Some(pos);
                let ids = snp_ids.as_ref().unwrap();
                validate_metadata(ids, positions.as_ref().unwrap()).map_err(|(l, msg)| {
                    Error::parse(
                        if l == 1 {
                            first_header_line(lineno)
                        } else {
                            lineno
                        },
                        msg,
                    )
                })?;
            }
            (_, Some(ids), Some(_)) => {
                let is_case = match head.trim() {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::parse(
                            lineno,
                            format!("phenotype must be 0 or 1, got {other:?}"),
                        ))
                    }
                };
                let row = fields
                    .map(|f| match f.trim() {
                        "0" => Ok(0u8),
                        "1" => Ok(1),
                        "2" => Ok(2),
                        "N" => match policy {
                            MissingPolicy::Reject => Err(Error::parse(
                                lineno,
                                "missing genotype (N) under reject policy",
                            )),
                            MissingPolicy::ModeImpute => Ok(MISSING),
                        },
                        other => Err(Error::parse(
                            lineno,
                            format!("invalid genotype code {other:?}"),
                        )),
                    })
                    .collect::<Result<Vec<u8>>>()?;
                if row.len() != ids.len() {
                    return Err(Error::parse(
                        lineno,
                        format!("row has {} genotypes, expected {}", row.len(), ids.len()),
                    ));
                }
                if is_case {
                    case_rows.push(row);
                    row_lines.0.push(lineno);
                } else {
                    control_rows.push(row);
                    row_lines.1.push(lineno);
                }
            }
            _ => {
                let expected = if snp_ids.is_none() { "#snp" } else { "#pos" };
                return Err(Error::parse(
                    lineno,
                    format!("expected {expected} header line"),
                ));
            }
        }
    }

    let snp_ids = snp_ids.ok_or_else(|| Error::parse(1, "missing #snp header"))?;
    let positions = positions.ok_or_else(|| Error::parse(2, "missing #pos header"))?;
    let n_snps = snp_ids.len();
    let n_cases = case_rows.len();
    let n_controls = control_rows.len();
    let n = n_cases + n_controls;
    let mut genotypes = vec![0u8; n_snps * n];
    for (i, row) in case_rows.iter().chain(&control_rows).enumerate() {
        for (j, &g) in row.iter().enumerate() {
            genotypes[j * n + i] = g;
        }
    }
    if policy == MissingPolicy::ModeImpute {
        for j in 0..n_snps {
            let col = &mut genotypes[j * n..(j + 1) * n];
            let mut counts = [0usize; 3];
            for &g in col.iter() {
                if g != MISSING {
                    counts[g as usize] += 1;
                }
            }
            if col.contains(&MISSING) {
                if counts.iter().all(|&c| c == 0) {
                    let first = row_lines.0.first().or(row_lines.1.first()).copied();
                    return Err(Error::parse(
                        first.unwrap_or(3),
                        format!(
                            "SNP {} has no observed genotypes to impute from",
                            snp_ids[j]
                        ),
                    ));
                }
                let mode = (0..3)
                    .max_by_key(|&g| (counts[g], std::cmp::Reverse(g)))
                    .unwrap() as u8;
                for g in col.iter_mut() {
                    if *g == MISSING {
                        *g = mode;
                    }
                }
            }
        }
    }
    Ok(GenotypeDataset::from_columns(
        snp_ids, positions, n_cases, n_controls, genotypes,
    ))
}

fn first_header_line(pos_line: usize) -> usize {
    // The #snp line immediately precedes #pos unless blank lines intervene;
    // report the header line itself in the common layout.
    pos_line.saturating_sub(1).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, policy: MissingPolicy) -> Result<GenotypeDataset> {
        read_dataset(text.as_bytes(), policy)
    }

    const SMALL: &str =
        "#snp\ta\tb\tc\n#pos\t10\t20\t30\n1\t0\t1\t2\n1\t0\t0\t1\n0\t2\t2\t0\n0\t1\t0\t0\n";

    #[test]
    fn loads_small_file() {
        let d = parse(SMALL, MissingPolicy::Reject).unwrap();
        assert_eq!(d.n_cases(), 2);
        assert_eq!(d.n_controls(), 2);
        assert_eq!(d.n_snps(), 3);
        assert_eq!(d.case_column(2), &[2, 1]);
        assert_eq!(d.control_column(0), &[2, 1]);
        assert_eq!(d.region_length(), 20);
    }

    #[test]
    fn canonical_round_trip() {
        let d = parse(SMALL, MissingPolicy::Reject).unwrap();
        assert_eq!(d.to_canonical_string(), SMALL);
    }

    #[test]
    fn interleaved_rows_are_grouped() {
        let text = "#snp\ta\n#pos\t5\n0\t2\n1\t1\n0\t0\n";
        let d = parse(text, MissingPolicy::Reject).unwrap();
        assert_eq!(d.column(0), &[1, 2, 0]);
        assert_eq!(
            d.to_canonical_string(),
            "#snp\ta\n#pos\t5\n1\t1\n0\t2\n0\t0\n"
        );
    }

    #[test]
    fn rejects_code_three_with_line() {
        let text = "#snp\ta\tb\n#pos\t1\t2\n1\t0\t1\n0\t3\t0\n";
        match parse(text, MissingPolicy::Reject) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("\"3\""), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_short_row() {
        let text = "#snp\ta\tb\n#pos\t1\t2\n1\t0\n";
        assert!(matches!(
            parse(text, MissingPolicy::Reject),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_missing_under_reject() {
        let text = "#snp\ta\n#pos\t1\n1\tN\n";
        assert!(matches!(
            parse(text, MissingPolicy::Reject),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_bad_metadata() {
        let dup = "#snp\ta\ta\n#pos\t1\t2\n";
        assert!(matches!(
            parse(dup, MissingPolicy::Reject),
            Err(Error::Parse { line: 1, .. })
        ));
        let order = "#snp\ta\tb\n#pos\t2\t2\n";
        assert!(matches!(
            parse(order, MissingPolicy::Reject),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn mode_imputation() {
        // Other three entries at SNP b are {0,0,1}: the missing one becomes 0.
        let text = "#snp\ta\tb\n#pos\t1\t2\n1\t0\t0\n1\t1\tN\n0\t2\t0\n0\t2\t1\n";
        let d = parse(text, MissingPolicy::ModeImpute).unwrap();
        assert_eq!(d.column(1), &[0, 0, 0, 1]);
    }

    #[test]
    fn column_counts_examples() {
        let text = "#snp\ta\n#pos\t1\n1\t0\n1\t0\n1\t1\n1\t2\n0\t2\n0\t2\n";
        let d = parse(text, MissingPolicy::Reject).unwrap();
        let (case, control) = d.column_counts(0).unwrap();
        assert_eq!(case, [2, 1, 1]);
        assert_eq!(control, [0, 0, 2]);
        assert!(d.column_counts(1).is_err());

        let empty = parse("#snp\ta\n#pos\t1\n", MissingPolicy::Reject).unwrap();
        assert_eq!(empty.column_counts(0).unwrap(), ([0; 3], [0; 3]));
        assert_eq!(empty.region_length(), 1);
    }

    #[test]
    fn swap_cohorts_exchanges_roles() {
        let d = parse(SMALL, MissingPolicy::Reject).unwrap();
        let s = d.swap_cohorts();
        assert_eq!(s.case_column(0), d.control_column(0));
        assert_eq!(s.control_column(1), d.case_column(1));
        assert_eq!(s.swap_cohorts(), d);
    }

    #[test]
    fn hwe_filter_drops_excess_heterozygotes() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let mut controls = Vec::new();
        for k in 0..200 {
            // SNP a: all heterozygous, SNP b: HWE at q = 0.5.
            let b = match k % 4 {
                0 => 0,
                3 => 2,
                _ => 1,
            };
            controls.push(vec![1, b]);
        }
        let d = GenotypeDataset::from_rows(ids, vec![1, 2], &[], &controls).unwrap();
        let (f, dropped) = d.hwe_filter(1e-5).unwrap();
        assert_eq!(dropped, vec![0]);
        assert_eq!(f.snp_ids(), &["b".to_string()]);
    }
}
