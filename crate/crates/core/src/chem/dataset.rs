use std::io::Read;
use std::path::Path;

use super::{parse_smiles, ChemError, Molecule};

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeRecord {
    pub id: String,
    pub smiles: String,
    /// One slot per task; `None` marks a missing label.
    pub labels: Vec<Option<f64>>,
}

/// Rows of an `id,smiles,<label columns...>` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub task_names: Vec<String>,
    pub records: Vec<MoleculeRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.task_names.len()
    }

    pub fn molecules(&self) -> Result<Vec<Molecule>, ChemError> {
        self.records
            .iter()
            .map(|r| {
                parse_smiles(&r.smiles).map_err(|e| {
                    ChemError::Dataset(format!("molecule '{}': {e}", r.id))
                })
            })
            .collect()
    }

    /// True when every present label is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.records
            .iter()
            .flat_map(|r| r.labels.iter().flatten())
            .all(|&y| y == 0.0 || y == 1.0)
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset, ChemError> {
    let file = std::fs::File::open(path)?;
    read_dataset_from(file)
}

pub fn read_dataset_from<R: Read>(reader: R) -> Result<Dataset, ChemError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ChemError::Dataset(e.to_string()))?
        .clone();
    if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "smiles" {
        return Err(ChemError::Dataset(
            "header must start with 'id,smiles'".into(),
        ));
    }
    let task_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| ChemError::Dataset(e.to_string()))?;
        if row.len() != headers.len() {
            return Err(ChemError::Dataset(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                row.len(),
                headers.len()
            )));
        }
        let labels = row
            .iter()
            .skip(2)
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| {
                        ChemError::Dataset(format!("row {}: bad label '{cell}'", line + 2))
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        records.push(MoleculeRecord {
            id: row[0].to_string(),
            smiles: row[1].to_string(),
            labels,
        });
    }
    Ok(Dataset {
        task_names,
        records,
    })
}

/// Inverse of [`read_dataset_from`]. Labels are written with Rust's
/// shortest round-trip formatting.
pub fn write_dataset<W: std::io::Write>(out: W, data: &Dataset) -> Result<(), ChemError> {
    let to_io = |e: csv::Error| ChemError::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "smiles".to_string()];
    header.extend(data.task_names.iter().cloned());
    w.write_record(&header).map_err(to_io)?;
    for r in &data.records {
        let mut row = vec![r.id.clone(), r.smiles.clone()];
        row.extend(r.labels.iter().map(|l| l.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_labels() {
        let text = "id,smiles,t1,t2\nm1,CCO,1,\nm2,c1ccccc1,,0\n";
        let d = read_dataset_from(text.as_bytes()).unwrap();
        assert_eq!(d.task_names, ["t1", "t2"]);
        assert_eq!(d.records[0].labels, [Some(1.0), None]);
        assert_eq!(d.records[1].labels, [None, Some(0.0)]);
        assert!(d.is_binary());
        assert_eq!(d.molecules().unwrap()[1].num_atoms(), 6);
    }

    #[test]
    fn bad_header() {
        assert!(read_dataset_from("smiles,id\nC,m\n".as_bytes()).is_err());
    }
}
