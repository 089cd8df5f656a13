//! Species-by-site abundance tables: loading, validation and the canonical
//! species ordering used by the likelihood.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Abundance matrix `N_ij` (sites × species) with one covariate per site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesCountTable {
    site_ids: Vec<String>,
    covariates: Vec<f64>,
    species_ids: Vec<String>,
    counts: Vec<Vec<u64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountFormat {
    Long,
    Wide,
}

impl std::str::FromStr for CountFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(CountFormat::Long),
            "wide" => Ok(CountFormat::Wide),
            other => Err(Error::InvalidArgument(format!("unknown count format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// `None` detects the layout from the header.
    pub format: Option<CountFormat>,
    /// Species whose total count is below this are dropped. 0 keeps all.
    pub min_total: u64,
}

impl SpeciesCountTable {
    /// Builds a table, checking shapes and covariates. Rows may still be empty;
    /// use [`SpeciesCountTable::validate_abundance`] to require `N_i ≥ 1`.
    pub fn new(
        site_ids: Vec<String>,
        covariates: Vec<f64>,
        species_ids: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if site_ids.len() != covariates.len() || site_ids.len() != counts.len() {
            return Err(Error::Validation(format!(
                "{} site ids, {} covariates and {} count rows",
                site_ids.len(),
                covariates.len(),
                counts.len()
            )));
        }
        if site_ids.is_empty() {
            return Err(Error::Validation("table has no sites".into()));
        }
        if let Some((i, row)) = counts
            .iter()
            .enumerate()
            .find(|(_, row)| row.len() != species_ids.len())
        {
            return Err(Error::Validation(format!(
                "row for site `{}` has {} counts, expected {}",
                site_ids[i],
                row.len(),
                species_ids.len()
            )));
        }
        if let Some(i) = covariates.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "covariate of site `{}` is not finite",
                site_ids[i]
            )));
        }
        Ok(Self {
            site_ids,
            covariates,
            species_ids,
            counts,
        })
    }

    /// Table of zeros; useful for prior-only runs.
    pub fn zeros(covariates: Vec<f64>, n_species: usize) -> Result<Self> {
        let n = covariates.len();
        Self::new(
            (0..n).map(|i| format!("s{}", i + 1)).collect(),
            covariates,
            (0..n_species).map(|j| format!("sp{}", j + 1)).collect(),
            vec![vec![0; n_species]; n],
        )
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn n_species(&self) -> usize {
        self.species_ids.len()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn species_ids(&self) -> &[String] {
        &self.species_ids
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn count(&self, site: usize, species: usize) -> u64 {
        self.counts[site][species]
    }

    /// `N_i`.
    pub fn site_total(&self, site: usize) -> u64 {
        self.counts[site].iter().sum()
    }

    /// `Σ_i N_ij`.
    pub fn species_totals(&self) -> Vec<u64> {
        (0..self.n_species())
            .map(|j| self.counts.iter().map(|row| row[j]).sum())
            .collect()
    }

    /// `N̄_{i,j+1} = Σ_{l>j} N_il` for every site and species (0-based `j`).
    pub fn tail_counts(&self) -> Vec<Vec<u64>> {
        self.counts
            .iter()
            .map(|row| {
                let mut tails = vec![0; row.len()];
                let mut acc = 0;
                for j in (0..row.len()).rev() {
                    tails[j] = acc;
                    acc += row[j];
                }
                tails
            })
            .collect()
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Result<Self> {
        if covariates.len() != self.n_sites() {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites(),
                got: covariates.len(),
            });
        }
        self.covariates = covariates;
        Ok(self)
    }

    /// Requires every site to have at least one observation.
    pub fn validate_abundance(&self) -> Result<()> {
        match (0..self.n_sites()).find(|&i| self.site_total(i) == 0) {
            Some(i) => Err(Error::ZeroAbundanceSite(self.site_ids[i].clone())),
            None => Ok(()),
        }
    }

    /// Drops species below `min_total` (and always those never observed), then
    /// sorts the remaining columns by non-increasing total abundance. Ties keep
    /// their original relative order.
    pub fn canonicalize(self, min_total: u64) -> Self {
        let totals = self.species_totals();
        let mut keep: Vec<usize> = (0..self.n_species())
            .filter(|&j| {
                let t = totals[j];
                if t == 0 {
                    warn!("dropping species `{}`: never observed", self.species_ids[j]);
                }
                t > 0 && t >= min_total
            })
            .collect();
        keep.sort_by(|&a, &b| totals[b].cmp(&totals[a]));
        let species_ids = keep.iter().map(|&j| self.species_ids[j].clone()).collect();
        let counts = self
            .counts
            .iter()
            .map(|row| keep.iter().map(|&j| row[j]).collect())
            .collect();
        Self {
            species_ids,
            counts,
            ..self
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.species_totals().windows(2).all(|w| w[0] >= w[1])
    }

    pub fn write_wide<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["site".to_string(), "covariate".to_string()];
        header.extend(self.species_ids.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for i in 0..self.n_sites() {
            let mut rec = vec![self.site_ids[i].clone(), fmt_f64(self.covariates[i])];
            rec.extend(self.counts[i].iter().map(|c| c.to_string()));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_long<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["site", "covariate", "species", "count"])
            .map_err(csv_io)?;
        for i in 0..self.n_sites() {
            for j in 0..self.n_species() {
                if self.counts[i][j] > 0 {
                    w.write_record([
                        self.site_ids[i].clone(),
                        fmt_f64(self.covariates[i]),
                        self.species_ids[j].clone(),
                        self.counts[i][j].to_string(),
                    ])
                    .map_err(csv_io)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv: {other:?}")),
    }
}

/// Reads a long or wide CSV, validates it and returns the canonical table.
pub fn load_counts(path: impl AsRef<Path>, options: LoadOptions) -> Result<SpeciesCountTable> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_counts(file, options)
}

pub fn parse_counts<R: Read>(reader: R, options: LoadOptions) -> Result<SpeciesCountTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file")),
    };
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    let is_long = header == ["site", "covariate", "species", "count"];
    let format = options.format.unwrap_or(if is_long {
        CountFormat::Long
    } else {
        CountFormat::Wide
    });
    let table = match format {
        CountFormat::Long => {
            if !is_long {
                return Err(parse_err(1, "expected header `site,covariate,species,count`"));
            }
            parse_long(records)?
        }
        CountFormat::Wide => parse_wide(&header, records)?,
    };
    table.validate_abundance()?;
    let table = table.canonicalize(options.min_total);
    if table.n_species() == 0 {
        return Err(Error::Validation("no species left after filtering".into()));
    }
    Ok(table)
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_covariate(field: &str, line: u64) -> Result<f64> {
    let x: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("invalid covariate `{field}`")))?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("non-finite covariate `{field}`")));
    }
    Ok(x)
}

fn parse_count(field: &str, line: u64) -> Result<u64> {
    let c: i64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("invalid count `{field}`")))?;
    if c < 0 {
        return Err(Error::Validation(format!("negative count {c} at line {line}")));
    }
    Ok(c as u64)
}

type Records<'a, R> = csv::StringRecordsIter<'a, R>;

fn parse_long<R: Read>(records: Records<'_, R>) -> Result<SpeciesCountTable> {
    let mut site_index: HashMap<String, usize> = HashMap::new();
    let mut species_index: HashMap<String, usize> = HashMap::new();
    let mut site_ids = Vec::new();
    let mut covariates = Vec::new();
    let mut species_ids = Vec::new();
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();

    for (k, rec) in records.enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let covariate = parse_covariate(&rec[1], line)?;
        let count = parse_count(&rec[3], line)?;
        let site = match site_index.get(&rec[0]) {
            Some(&i) => {
                if covariates[i] != covariate {
                    return Err(Error::Validation(format!(
                        "site `{}` has conflicting covariates at line {line}",
                        &rec[0]
                    )));
                }
                i
            }
            None => {
                site_index.insert(rec[0].to_string(), site_ids.len());
                site_ids.push(rec[0].to_string());
                covariates.push(covariate);
                site_ids.len() - 1
            }
        };
        let species = *species_index.entry(rec[2].to_string()).or_insert_with(|| {
            species_ids.push(rec[2].to_string());
            species_ids.len() - 1
        });
        if cells.insert((site, species), count).is_some() {
            return Err(Error::Validation(format!(
                "duplicate cell (site `{}`, species `{}`) at line {line}",
                &rec[0], &rec[2]
            )));
        }
    }
    let mut counts = vec![vec![0; species_ids.len()]; site_ids.len()];
    for ((i, j), c) in cells {
        counts[i][j] = c;
    }
    SpeciesCountTable::new(site_ids, covariates, species_ids, counts)
}

fn parse_wide<R: Read>(header: &[String], records: Records<'_, R>) -> Result<SpeciesCountTable> {
    if header.len() < 3 || header[0] != "site" || header[1] != "covariate" {
        return Err(parse_err(1, "expected header `site,covariate,<species...>`"));
    }
    let species_ids: Vec<String> = header[2..].to_vec();
    let mut seen = HashMap::new();
    for s in &species_ids {
        if seen.insert(s.as_str(), ()).is_some() {
            return Err(Error::Validation(format!("duplicate species column `{s}`")));
        }
    }
    let mut site_ids: Vec<String> = Vec::new();
    let mut covariates = Vec::new();
    let mut counts = Vec::new();
    for (k, rec) in records.enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        if site_ids.iter().any(|s| s == &rec[0]) {
            return Err(Error::Validation(format!(
                "duplicate site `{}` at line {line}",
                &rec[0]
            )));
        }
        site_ids.push(rec[0].to_string());
        covariates.push(parse_covariate(&rec[1], line)?);
        counts.push(
            rec.iter()
                .skip(2)
                .map(|f| parse_count(f, line))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    SpeciesCountTable::new(site_ids, covariates, species_ids, counts)
}

/// Gaussian perturbation of covariates used to break ties between sites.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl JitterSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "jitter sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma, seed })
    }
}

/// Adds `N(0, sigma²)` noise to every covariate. Zero covariates become the
/// absolute value of their noise, so they stay non-negative. Entries that
/// collide after perturbation are redrawn until all values are distinct.
pub fn jitter_covariates(x: &[f64], spec: &JitterSpec) -> Vec<f64> {
    let mut rng = rng::stream(spec.seed, 0);
    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let draw = |xi: f64, rng: &mut rng::StreamRng| {
        let eps = normal.sample(rng);
        if xi == 0.0 {
            eps.abs()
        } else {
            xi + eps
        }
    };
    let mut out: Vec<f64> = x.iter().map(|&xi| draw(xi, &mut rng)).collect();
    loop {
        let colliding = colliding_indices(&out);
        if colliding.is_empty() {
            return out;
        }
        for i in colliding {
            out[i] = draw(x[i], &mut rng);
        }
    }
}

fn colliding_indices(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = Vec::new();
    for w in order.windows(2) {
        if values[w[0]] == values[w[1]] {
            out.push(w[0]);
            out.push(w[1]);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Observed proportions `p̂_ij = N_ij / N_i`.
pub fn empirical_proportions(table: &SpeciesCountTable) -> Result<Vec<Vec<f64>>> {
    table
        .counts()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                return Err(Error::ZeroAbundanceSite(table.site_ids()[i].clone()));
            }
            Ok(row.iter().map(|&c| c as f64 / total as f64).collect())
        })
        .collect()
}
