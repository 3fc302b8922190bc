//! Interim data files: CSV with header `patient_id,dose,response`.

use std::io::Read;

use dosefind::inference::Dataset;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
struct Row {
    patient_id: String,
    dose: f64,
    response: f64,
}

/// Reads observations onto the configured dose grid. Every row whose dose is
/// off the grid or whose response is not finite is reported together.
pub fn read_dataset<R: Read>(input: R, doses: &[f64]) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("data file: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["patient_id", "dose", "response"] {
        return Err(CliError::Validation(format!(
            "data file header must be patient_id,dose,response (got {})",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut data = Dataset::new(doses.to_vec()).map_err(CliError::from)?;
    let mut bad = Vec::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = match rec {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        if !row.response.is_finite() {
            bad.push(format!(
                "line {line} (patient {}): response not finite",
                row.patient_id
            ));
            continue;
        }
        match data.dose_index(row.dose) {
            Some(idx) => data.push_at(idx, row.response),
            None => bad.push(format!(
                "line {line} (patient {}): dose {} not in the configured grid",
                row.patient_id, row.dose
            )),
        }
    }
    if !bad.is_empty() {
        return Err(CliError::Validation(format!(
            "{} invalid data row(s):\n  {}",
            bad.len(),
            bad.join("\n  ")
        )));
    }
    Ok(data)
}
