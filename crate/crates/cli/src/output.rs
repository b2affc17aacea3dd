//! Tab-separated result files. Every file starts with one `#` header line
//! naming its columns; floats use the shortest exact decimal form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use beamscan::bstat::BStatResult;
use beamscan::mcmc::{MultiChainResult, PosteriorSummary};
use beamscan::oracle::OracleResult;
use beamscan::sim::{PenetranceModel, Truth};
use beamscan::GenotypeDataset;

use crate::CliError;

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Shortest round-trip form; scientific notation outside [1e-4, 1e15).
pub struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

fn per_snp_table(
    dataset: &GenotypeDataset,
    marginal: &[f64],
    epistatic: &[f64],
    assoc: &[f64],
    boundary: &[f64],
) -> String {
    let mut s = String::from("#snp_id\tposition\tp_marginal\tp_epistatic\tp_assoc\tp_boundary\n");
    for j in 0..dataset.n_snps() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            dataset.snp_ids()[j],
            dataset.positions()[j],
            Num(marginal[j]),
            Num(epistatic[j]),
            Num(assoc[j]),
            Num(boundary[j])
        );
    }
    s
}

pub fn posterior_table(dataset: &GenotypeDataset, summary: &PosteriorSummary) -> String {
    per_snp_table(
        dataset,
        &summary.marginal_posterior,
        &summary.epistatic_posterior,
        &summary.assoc_posterior,
        &summary.boundary_posterior,
    )
}

pub fn oracle_table(dataset: &GenotypeDataset, result: &OracleResult) -> String {
    per_snp_table(
        dataset,
        &result.marginal_posterior,
        &result.epistatic_posterior,
        &result.assoc_posterior(),
        &result.boundary_posterior,
    )
}

fn id_list(dataset: &GenotypeDataset, snps: &[usize]) -> String {
    snps.iter()
        .map(|&s| dataset.snp_ids()[s].as_str())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn sets_table(dataset: &GenotypeDataset, summary: &PosteriorSummary) -> String {
    let mut s = String::from("#snp_ids\tsize\tfrequency\n");
    for (set, f) in summary.interaction_sets_by_frequency() {
        let _ = writeln!(s, "{}\t{}\t{}", id_list(dataset, &set), set.len(), Num(f));
    }
    s
}

pub fn diagnostics_table(result: &MultiChainResult) -> String {
    let mut s = String::from("#metric\tchain\tindex\tvalue\n");
    for (c, chain) in result.chains.iter().enumerate() {
        let st = &chain.move_stats;
        let _ = writeln!(s, "samples\t{c}\t0\t{}", chain.samples_used);
        let _ = writeln!(s, "mean_block_count\t{c}\t0\t{}", chain.mean_block_count);
        let _ = writeln!(
            s,
            "block_acceptance\t{c}\t0\t{}",
            st.block_acceptance_rate()
        );
        let _ = writeln!(s, "swap_acceptance\t{c}\t0\t{}", st.swap_acceptance_rate());
        for (lag, r) in result.diagnostics.autocorrelation[c].iter().enumerate() {
            let _ = writeln!(s, "autocorrelation\t{c}\t{}\t{}", lag + 1, Num(*r));
        }
    }
    for &(a, b, r) in &result.diagnostics.assoc_correlation {
        let _ = writeln!(s, "assoc_correlation\t{a}\t{b}\t{}", Num(r));
    }
    s
}

pub fn bstat_table(dataset: &GenotypeDataset, results: &[BStatResult]) -> String {
    let mut s =
        String::from("#snp_ids\tM\tb_value\tdf\tshift\tp_value\tcalibration\tsignificant\n");
    for r in results {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            id_list(dataset, &r.snp_set),
            r.order(),
            Num(r.b_value),
            r.df,
            Num(r.shift),
            Num(r.p_value),
            r.calibration.as_str(),
            u8::from(r.significant)
        );
    }
    s
}

pub fn truth_table(dataset: &GenotypeDataset, truth: &Truth) -> String {
    let join = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let windows = truth
        .windows
        .iter()
        .map(|w| format!("{}-{}", w.start(), w.end()))
        .collect::<Vec<_>>()
        .join(",");
    let mut s = String::from("#key\tvalue\n");
    let model = truth.model.map_or_else(
        || "none".to_string(),
        |m: PenetranceModel| m.id().to_string(),
    );
    let _ = writeln!(s, "model\t{model}");
    let _ = writeln!(s, "theta\t{}", truth.theta);
    let _ = writeln!(s, "maf\t{}", truth.maf);
    let _ = writeln!(s, "marginal_effect\t{}", truth.marginal_effect);
    let _ = writeln!(s, "locus_ids\t{}", truth.locus_ids.join(","));
    let _ = writeln!(s, "loci\t{}", join(&truth.loci));
    let _ = writeln!(s, "windows\t{windows}");
    let _ = writeln!(s, "block_starts\t{}", join(&truth.block_starts));
    let boundary_ids: Vec<&str> = truth
        .block_starts
        .iter()
        .map(|&b| dataset.snp_ids()[b].as_str())
        .collect();
    let _ = writeln!(s, "block_start_ids\t{}", boundary_ids.join(","));
    let _ = writeln!(s, "loci_dropped\t{}", truth.loci_dropped);
    s
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|e: io::Error| CliError::Data(format!("{}: {e}", path.display())))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((i + 1, t.to_string()));
    }
    Ok(out)
}

fn resolve_ids(
    dataset: &GenotypeDataset,
    ids: &str,
    path: &Path,
    line: usize,
) -> Result<Vec<usize>, CliError> {
    ids.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|id| {
            dataset.snp_index(id).ok_or_else(|| {
                CliError::Data(format!("{}:{line}: unknown SNP id {id:?}", path.display()))
            })
        })
        .collect()
}

/// One SNP set per line: ids separated by commas or whitespace.
pub fn read_sets(path: &Path, dataset: &GenotypeDataset) -> Result<Vec<Vec<usize>>, CliError> {
    data_lines(path)?
        .into_iter()
        .map(|(n, line)| resolve_ids(dataset, &line, path, n))
        .collect()
}

fn parse_f64(field: &str, path: &Path, line: usize) -> Result<f64, CliError> {
    field
        .parse()
        .map_err(|_| CliError::Data(format!("{}:{line}: bad number {field:?}", path.display())))
}

/// Reads `PREFIX.posterior.tsv` and `PREFIX.sets.tsv` back into a summary.
pub fn read_posterior(
    prefix: &str,
    dataset: &GenotypeDataset,
) -> Result<PosteriorSummary, CliError> {
    let path = format!("{prefix}.posterior.tsv");
    let path = Path::new(&path);
    let l = dataset.n_snps();
    let mut s = PosteriorSummary::empty(l);
    let rows = data_lines(path)?;
    if rows.len() != l {
        return Err(CliError::Data(format!(
            "{}: {} rows for {l} SNPs",
            path.display(),
            rows.len()
        )));
    }
    for (j, (n, line)) in rows.iter().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(CliError::Data(format!(
                "{}:{n}: expected 6 columns",
                path.display()
            )));
        }
        if f[0] != dataset.snp_ids()[j] {
            return Err(CliError::Data(format!(
                "{}:{n}: SNP {:?} does not match dataset SNP {:?}",
                path.display(),
                f[0],
                dataset.snp_ids()[j]
            )));
        }
        s.marginal_posterior[j] = parse_f64(f[2], path, *n)?;
        s.epistatic_posterior[j] = parse_f64(f[3], path, *n)?;
        s.assoc_posterior[j] = parse_f64(f[4], path, *n)?;
        s.boundary_posterior[j] = parse_f64(f[5], path, *n)?;
    }
    let sets_path = format!("{prefix}.sets.tsv");
    let sets_path = Path::new(&sets_path);
    let mut sets = BTreeMap::new();
    for (n, line) in data_lines(sets_path)? {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(CliError::Data(format!(
                "{}:{n}: expected 3 columns",
                sets_path.display()
            )));
        }
        let mut set = resolve_ids(dataset, f[0], sets_path, n)?;
        set.sort_unstable();
        sets.insert(set, parse_f64(f[2], sets_path, n)?);
    }
    s.interaction_sets = sets;
    s.no_samples = false;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::Num;

    #[test]
    fn numbers_round_trip() {
        for x in [
            0.0,
            1.0,
            0.25,
            1e-4,
            4.886052514815223e-50,
            0.9999999999999484,
            -3.26,
            1e20,
        ] {
            let s = Num(x).to_string();
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(
            Num(4.886052514815223e-50).to_string(),
            "4.886052514815223e-50"
        );
        assert_eq!(Num(0.5).to_string(), "0.5");
    }
}
