//! Reading count grids and long-format records into a [`Dataset`].

use std::collections::HashMap;
use std::path::Path;

use bolm_core::model::{Dataset, Group, OrdinalPair};
use serde::Serialize;

use crate::config::{DataConfig, DataFormat};
use crate::error::{CliError, CliResult};

/// A dataset with its covariate names and any centering applied.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub covariate_names: Vec<String>,
    pub summary: DataSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub path: String,
    pub format: DataFormat,
    pub categories: [usize; 2],
    pub n: u64,
    pub groups: usize,
    pub covariates: Vec<String>,
    /// Means subtracted from the covariates, in covariate order.
    pub centering: Option<Vec<f64>>,
}

pub fn load(cfg: &DataConfig, path: &Path) -> CliResult<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let fail = |message: String| CliError::Data {
        path: path.to_path_buf(),
        message,
    };
    let (pair, names, mut groups) = match cfg.format {
        DataFormat::Table => {
            let (pair, counts) = parse_table(&text, cfg.categories).map_err(fail)?;
            (pair, Vec::new(), vec![Group { covariates: vec![], counts }])
        }
        DataFormat::Long => parse_long(&text, cfg.categories).map_err(fail)?,
    };
    let centering = if cfg.center && !names.is_empty() {
        let means = weighted_means(&groups, names.len());
        for g in &mut groups {
            for (x, m) in g.covariates.iter_mut().zip(&means) {
                *x -= m;
            }
        }
        Some(means)
    } else {
        None
    };
    let dataset = Dataset::new(pair, names.len(), groups)?;
    let summary = DataSummary {
        path: path.display().to_string(),
        format: cfg.format,
        categories: [pair.d1(), pair.d2()],
        n: dataset.n(),
        groups: dataset.groups().len(),
        covariates: names.clone(),
        centering,
    };
    Ok(Loaded {
        dataset,
        covariate_names: names,
        summary,
    })
}

fn parse_count(tok: &str, line: usize) -> Result<u64, String> {
    tok.parse::<u64>()
        .map_err(|_| format!("line {line}: count {tok:?} is not a non-negative integer"))
}

/// A `d1 x d2` grid of counts, whitespace or comma separated, with `#`
/// comments and blank lines ignored.
pub fn parse_table(text: &str, categories: Option<[usize; 2]>) -> Result<(OrdinalPair, Vec<u64>), String> {
    let mut rows: Vec<Vec<u64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| parse_count(t, i + 1))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(format!(
                    "line {}: ragged row with {} entries, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("no counts found".into());
    }
    let (d1, d2) = (rows.len(), rows[0].len());
    if let Some([e1, e2]) = categories {
        if (e1, e2) != (d1, d2) {
            return Err(format!("grid is {d1}x{d2}, configuration says {e1}x{e2}"));
        }
    }
    let pair = OrdinalPair::new(d1, d2).map_err(|e| e.to_string())?;
    Ok((pair, rows.concat()))
}

/// CSV with header `a1,a2,<covariates...>[,count]`. Rows sharing a
/// covariate profile form one group, in order of first appearance.
pub fn parse_long(text: &str, categories: Option<[usize; 2]>) -> Result<(OrdinalPair, Vec<String>, Vec<Group>), String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 || header[0] != "a1" || header[1] != "a2" {
        return Err(format!("header must start with a1,a2, got {header:?}"));
    }
    let has_count = header.last().is_some_and(|h| h == "count");
    let names: Vec<String> = header[2..header.len() - usize::from(has_count)].to_vec();

    let mut records: Vec<(usize, usize, Vec<f64>, u64)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format!("line {line}: {e}"))?;
        if rec.len() != header.len() {
            return Err(format!("line {line}: ragged row with {} fields, expected {}", rec.len(), header.len()));
        }
        let label = |k: usize| {
            rec[k]
                .parse::<usize>()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| format!("line {line}: category label {:?} is not a positive integer", &rec[k]))
        };
        let (a1, a2) = (label(0)?, label(1)?);
        let x = (0..names.len())
            .map(|j| {
                let tok = &rec[2 + j];
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("line {line}: covariate {} value {tok:?} is not a finite number", names[j]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let count = if has_count { parse_count(&rec[header.len() - 1], line)? } else { 1 };
        records.push((a1, a2, x, count));
    }
    if records.is_empty() {
        return Err("no records found".into());
    }
    let [d1, d2] = categories.unwrap_or_else(|| {
        let m = |f: fn(&(usize, usize, Vec<f64>, u64)) -> usize| records.iter().map(f).max().unwrap_or(0);
        [m(|r| r.0), m(|r| r.1)]
    });
    let pair = OrdinalPair::new(d1, d2).map_err(|e| e.to_string())?;

    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (k, (a1, a2, x, count)) in records.into_iter().enumerate() {
        if a1 > d1 || a2 > d2 {
            return Err(format!("record {}: labels ({a1}, {a2}) outside 1..{d1} x 1..{d2}", k + 1));
        }
        let key: Vec<u64> = x.iter().map(|v| (v + 0.0).to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Group {
                covariates: x,
                counts: vec![0; d1 * d2],
            });
            groups.len() - 1
        });
        groups[g].counts[(a1 - 1) * d2 + (a2 - 1)] += count;
    }
    groups.retain(|g| g.total() > 0);
    Ok((pair, names, groups))
}

fn weighted_means(groups: &[Group], p: usize) -> Vec<f64> {
    let n: f64 = groups.iter().map(|g| g.total() as f64).sum();
    (0..p)
        .map(|j| groups.iter().map(|g| g.total() as f64 * g.covariates[j]).sum::<f64>() / n)
        .collect()
}
