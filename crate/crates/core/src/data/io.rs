//! Loading and writing the dataset file trio: `studies.csv` (one row per
//! study), `outputs.csv` (long-format model scores), and an optional
//! `hierarchy.json`. Schema violations are reported with the offending
//! file and line number.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Dataset, FindingName, LabelHierarchy, StudyRecord, TaskName, N_FINDINGS, N_TASKS};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 6] = [
    "study_id",
    "age",
    "sex",
    "has_lateral_view",
    "num_ap_views",
    "num_pa_views",
];

fn display_path(path: &Path) -> String {
    path.display().to_string()
}

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(display_path(path), e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

/// Column-name → position map that rejects duplicate, unknown, and missing
/// columns. `known` lists every admissible column name.
fn header_map(path: &Path, headers: &csv::StringRecord, known: &[&str]) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        if !known.contains(&name) {
            return Err(Error::schema(
                display_path(path),
                format!("unknown column '{name}'"),
            ));
        }
        if map.insert(name.to_string(), i).is_some() {
            return Err(Error::schema(
                display_path(path),
                format!("duplicate column '{name}'"),
            ));
        }
    }
    for required in known {
        if !map.contains_key(*required) {
            return Err(Error::schema(
                display_path(path),
                format!("missing column '{required}'"),
            ));
        }
    }
    Ok(map)
}

struct RowContext<'a> {
    path: &'a Path,
    line: u64,
}

impl RowContext<'_> {
    fn error(&self, message: impl std::fmt::Display) -> Error {
        Error::schema(display_path(self.path), format!("line {}: {message}", self.line))
    }

    fn field<'r>(&self, record: &'r csv::StringRecord, index: usize, column: &str) -> Result<&'r str> {
        record
            .get(index)
            .ok_or_else(|| self.error(format!("missing value for column '{column}'")))
    }

    fn parse_f64(&self, raw: &str, column: &str) -> Result<f64> {
        raw.trim()
            .parse::<f64>()
            .map_err(|_| self.error(format!("column '{column}': expected a number, got '{raw}'")))
    }

    fn parse_u32(&self, raw: &str, column: &str) -> Result<u32> {
        raw.trim()
            .parse::<u32>()
            .map_err(|_| self.error(format!("column '{column}': expected a non-negative integer, got '{raw}'")))
    }

    fn parse_binary(&self, raw: &str, column: &str) -> Result<u8> {
        match raw.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(self.error(format!("column '{column}': expected 0 or 1, got '{other}'"))),
        }
    }
}

fn read_studies(path: &Path) -> Result<Vec<StudyRecord>> {
    let mut reader = open_reader(path)?;
    let known: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(FindingName::ALL.iter().map(|f| f.as_str()))
        .collect();
    let headers = reader
        .headers()
        .map_err(|e| Error::schema(display_path(path), e.to_string()))?
        .clone();
    let columns = header_map(path, &headers, &known)?;

    let mut studies = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::schema(display_path(path), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let ctx = RowContext { path, line };

        let study_id = ctx.field(&record, columns["study_id"], "study_id")?.to_string();
        if study_id.is_empty() {
            return Err(ctx.error("study_id must not be empty"));
        }
        if let Some(first) = seen.insert(study_id.clone(), line) {
            return Err(ctx.error(format!(
                "duplicate study_id '{study_id}' (first seen at line {first})"
            )));
        }

        let age = ctx.parse_f64(ctx.field(&record, columns["age"], "age")?, "age")?;
        if !age.is_finite() || age < 0.0 {
            return Err(ctx.error(format!("column 'age': must be non-negative, got {age}")));
        }
        let sex = ctx.parse_binary(ctx.field(&record, columns["sex"], "sex")?, "sex")?;
        let has_lateral_view = ctx.parse_binary(
            ctx.field(&record, columns["has_lateral_view"], "has_lateral_view")?,
            "has_lateral_view",
        )? == 1;
        let num_ap_views = ctx.parse_u32(
            ctx.field(&record, columns["num_ap_views"], "num_ap_views")?,
            "num_ap_views",
        )?;
        let num_pa_views = ctx.parse_u32(
            ctx.field(&record, columns["num_pa_views"], "num_pa_views")?,
            "num_pa_views",
        )?;
        if num_ap_views + num_pa_views + u32::from(has_lateral_view) == 0 {
            return Err(ctx.error("study has no views (AP, PA, and lateral all absent)"));
        }

        let mut labels = [0u8; N_FINDINGS];
        for finding in FindingName::ALL {
            let column = finding.as_str();
            let raw = ctx.field(&record, columns[column], column)?;
            labels[finding.index()] = ctx.parse_binary(raw, column)?;
        }

        studies.push(StudyRecord {
            study_id,
            age,
            sex,
            has_lateral_view,
            num_ap_views,
            num_pa_views,
            labels,
        });
    }
    if studies.is_empty() {
        return Err(Error::schema(display_path(path), "no study rows"));
    }
    Ok(studies)
}

fn read_outputs(path: &Path, studies: &[StudyRecord]) -> Result<(Vec<String>, Vec<f64>)> {
    let study_index: HashMap<&str, usize> = studies
        .iter()
        .enumerate()
        .map(|(i, s)| (s.study_id.as_str(), i))
        .collect();

    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::schema(display_path(path), e.to_string()))?
        .clone();
    let columns = header_map(path, &headers, &["study_id", "model_id", "task", "score"])?;

    // (model_id, task, study) -> (score, line); model ids in file order
    // for now, re-sorted below.
    let mut model_slots: HashMap<String, usize> = HashMap::new();
    let mut model_order: Vec<String> = Vec::new();
    let mut cells: HashMap<(usize, usize, usize), (f64, u64)> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::schema(display_path(path), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let ctx = RowContext { path, line };

        let study_id = ctx.field(&record, columns["study_id"], "study_id")?;
        let &study = study_index
            .get(study_id)
            .ok_or_else(|| ctx.error(format!("unknown study_id '{study_id}' (not in studies.csv)")))?;

        let model_id = ctx.field(&record, columns["model_id"], "model_id")?;
        if model_id.is_empty() {
            return Err(ctx.error("model_id must not be empty"));
        }
        let slot = *model_slots.entry(model_id.to_string()).or_insert_with(|| {
            model_order.push(model_id.to_string());
            model_order.len() - 1
        });

        let task_raw = ctx.field(&record, columns["task"], "task")?;
        let task = TaskName::parse(task_raw)
            .ok_or_else(|| ctx.error(format!("unknown task '{task_raw}'")))?;

        let score = ctx.parse_f64(ctx.field(&record, columns["score"], "score")?, "score")?;
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(ctx.error(format!("column 'score': out of range [0, 1], got {score}")));
        }

        if let Some((_, first)) = cells.insert((slot, task.index(), study), (score, line)) {
            return Err(ctx.error(format!(
                "duplicate output for study '{study_id}', model '{model_id}', task '{task}' \
                 (first seen at line {first})"
            )));
        }
    }

    if model_order.is_empty() {
        return Err(Error::schema(display_path(path), "no output rows"));
    }

    // Re-map slots onto sorted model order and demand completeness.
    let mut sorted_ids = model_order.clone();
    sorted_ids.sort();
    let slot_of_sorted: Vec<usize> = sorted_ids
        .iter()
        .map(|id| model_slots[id.as_str()])
        .collect();

    let n = studies.len();
    let mut scores = Vec::with_capacity(sorted_ids.len() * N_TASKS * n);
    for (m, &slot) in slot_of_sorted.iter().enumerate() {
        for task in TaskName::ALL {
            for (s, study) in studies.iter().enumerate() {
                match cells.get(&(slot, task.index(), s)) {
                    Some(&(score, _)) => scores.push(score),
                    None => {
                        return Err(Error::schema(
                            display_path(path),
                            format!(
                                "missing output for study '{}', model '{}', task '{task}'",
                                study.study_id, sorted_ids[m]
                            ),
                        ))
                    }
                }
            }
        }
    }
    Ok((sorted_ids, scores))
}

/// Load and validate a dataset. When `hierarchy_json` is `None` the
/// default CheXpert ontology applies.
pub fn load_dataset(
    studies_csv: &Path,
    outputs_csv: &Path,
    hierarchy_json: Option<&Path>,
) -> Result<Dataset> {
    let studies = read_studies(studies_csv)?;
    let (model_ids, scores) = read_outputs(outputs_csv, &studies)?;
    let hierarchy = match hierarchy_json {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(display_path(path), e))?;
            LabelHierarchy::from_json(&text)
                .map_err(|e| Error::schema(display_path(path), e.to_string()))?
        }
        None => LabelHierarchy::default_chexpert(),
    };
    Dataset::new(studies, model_ids, scores, hierarchy)
}

/// Write a dataset back out in canonical column and row order. Floats are
/// written in shortest round-trip form, so `load(write(ds)) == ds`.
pub fn write_dataset(
    ds: &Dataset,
    studies_csv: &Path,
    outputs_csv: &Path,
    hierarchy_json: &Path,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(studies_csv)
        .map_err(|e| Error::schema(display_path(studies_csv), e.to_string()))?;
    let header: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(FindingName::ALL.iter().map(|f| f.as_str()))
        .collect();
    writer
        .write_record(&header)
        .map_err(|e| Error::schema(display_path(studies_csv), e.to_string()))?;
    for study in ds.studies() {
        let mut row: Vec<String> = vec![
            study.study_id.clone(),
            format!("{}", study.age),
            format!("{}", study.sex),
            format!("{}", u8::from(study.has_lateral_view)),
            format!("{}", study.num_ap_views),
            format!("{}", study.num_pa_views),
        ];
        row.extend(study.labels.iter().map(|l| format!("{l}")));
        writer
            .write_record(&row)
            .map_err(|e| Error::schema(display_path(studies_csv), e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(display_path(studies_csv), e))?;

    let mut writer = csv::Writer::from_path(outputs_csv)
        .map_err(|e| Error::schema(display_path(outputs_csv), e.to_string()))?;
    writer
        .write_record(["study_id", "model_id", "task", "score"])
        .map_err(|e| Error::schema(display_path(outputs_csv), e.to_string()))?;
    for (m, model_id) in ds.model_ids().iter().enumerate() {
        for task in TaskName::ALL {
            let scores = ds.scores_for(m, task);
            for (s, study) in ds.studies().iter().enumerate() {
                writer
                    .write_record([
                        study.study_id.as_str(),
                        model_id.as_str(),
                        task.as_str(),
                        &format!("{}", scores[s]),
                    ])
                    .map_err(|e| Error::schema(display_path(outputs_csv), e.to_string()))?;
            }
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(display_path(outputs_csv), e))?;

    fs::write(hierarchy_json, ds.hierarchy().to_json())
        .map_err(|e| Error::io(display_path(hierarchy_json), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn finding_headers() -> String {
        FindingName::ALL
            .iter()
            .map(|f| f.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    fn studies_csv_3() -> String {
        let zeros = "0,".repeat(N_FINDINGS - 1) + "0";
        let mut ones = vec!["0"; N_FINDINGS];
        ones[FindingName::Cardiomegaly.index()] = "1";
        format!(
            "study_id,age,sex,has_lateral_view,num_ap_views,num_pa_views,{}\n\
             s1,63.5,1,0,1,0,{zeros}\n\
             s2,41,0,1,0,1,{}\n\
             s3,77,1,0,2,0,{zeros}\n",
            finding_headers(),
            ones.join(",")
        )
    }

    fn outputs_csv_3() -> String {
        let mut rows = String::from("study_id,model_id,task,score\n");
        for study in ["s1", "s2", "s3"] {
            for task in TaskName::ALL {
                rows.push_str(&format!("{study},m0,{task},0.25\n"));
            }
        }
        rows
    }

    #[test]
    fn three_study_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let studies = write_file(dir.path(), "studies.csv", &studies_csv_3());
        let outputs = write_file(dir.path(), "outputs.csv", &outputs_csv_3());
        let ds = load_dataset(&studies, &outputs, None).unwrap();
        assert_eq!(ds.n_studies(), 3);
        assert_eq!(ds.n_models(), 1);
        assert_eq!(ds.study(1).age, 41.0);
        assert!(ds.study(1).has_lateral_view);
        assert_eq!(ds.study(1).label(FindingName::Cardiomegaly), 1);
        assert_eq!(ds.score(0, TaskName::Edema, 2), 0.25);
        // Default hierarchy applies when no hierarchy file is given.
        assert_eq!(ds.hierarchy(), &LabelHierarchy::default_chexpert());
    }

    #[test]
    fn out_of_range_score_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let studies = write_file(dir.path(), "studies.csv", &studies_csv_3());
        let mut bad = outputs_csv_3();
        bad = bad.replace("s2,m0,Cardiomegaly,0.25", "s2,m0,Cardiomegaly,1.2");
        let outputs = write_file(dir.path(), "outputs.csv", &bad);
        let err = load_dataset(&studies, &outputs, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 8"), "unexpected message: {msg}");
        assert!(msg.contains("1.2"), "unexpected message: {msg}");
    }

    #[test]
    fn duplicate_study_id_names_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        let dup = studies_csv_3().replace("s3,", "s1,");
        let studies = write_file(dir.path(), "studies.csv", &dup);
        let outputs = write_file(dir.path(), "outputs.csv", &outputs_csv_3());
        let err = load_dataset(&studies, &outputs, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate study_id 's1'"), "{msg}");
        assert!(msg.contains("line 4") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn missing_and_unknown_columns_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let no_age = studies_csv_3().replace("study_id,age,", "study_id,");
        // Removing the header cell alone would misalign fields; drop one
        // data field per row too so only the header check can fire.
        let no_age = no_age
            .replace("s1,63.5,", "s1,")
            .replace("s2,41,", "s2,")
            .replace("s3,77,", "s3,");
        let studies = write_file(dir.path(), "studies.csv", &no_age);
        let outputs = write_file(dir.path(), "outputs.csv", &outputs_csv_3());
        let err = load_dataset(&studies, &outputs, None).unwrap_err();
        assert!(err.to_string().contains("missing column 'age'"), "{err}");

        let extra = studies_csv_3().replace(
            "study_id,age,",
            "study_id,age,mystery,",
        );
        let studies = write_file(dir.path(), "studies2.csv", &extra);
        let err = load_dataset(&studies, &outputs, None).unwrap_err();
        assert!(err.to_string().contains("unknown column 'mystery'"), "{err}");
    }

    #[test]
    fn incomplete_output_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let studies = write_file(dir.path(), "studies.csv", &studies_csv_3());
        let mut missing = outputs_csv_3();
        missing = missing.replace("s3,m0,Edema,0.25\n", "");
        let outputs = write_file(dir.path(), "outputs.csv", &missing);
        let err = load_dataset(&studies, &outputs, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing output"), "{msg}");
        assert!(msg.contains("'s3'") && msg.contains("Edema"), "{msg}");
    }

    #[test]
    fn unknown_study_task_and_duplicates_in_outputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let studies = write_file(dir.path(), "studies.csv", &studies_csv_3());

        let unknown = outputs_csv_3().replace("s2,m0,Edema", "sX,m0,Edema");
        let outputs = write_file(dir.path(), "o1.csv", &unknown);
        let err = load_dataset(&studies, &outputs, None).unwrap_err();
        assert!(err.to_string().contains("unknown study_id 'sX'"), "{err}");

        let unknown_task = outputs_csv_3().replace("s2,m0,Edema", "s2,m0,Fracture");
        let outputs = write_file(dir.path(), "o2.csv", &unknown_task);
        let err = load_dataset(&studies, &outputs, None).unwrap_err();
        assert!(err.to_string().contains("unknown task 'Fracture'"), "{err}");

        let dup = outputs_csv_3().replace("s2,m0,Edema,0.25", "s1,m0,Edema,0.5");
        let outputs = write_file(dir.path(), "o3.csv", &dup);
        let err = load_dataset(&studies, &outputs, None).unwrap_err();
        assert!(err.to_string().contains("duplicate output"), "{err}");
    }

    #[test]
    fn round_trip_reproduces_the_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let studies = write_file(dir.path(), "studies.csv", &studies_csv_3());
        // Awkward floats to exercise shortest round-trip formatting.
        let outputs_text = outputs_csv_3()
            .replace("s1,m0,Atelectasis,0.25", "s1,m0,Atelectasis,0.1")
            .replace("s2,m0,Cardiomegaly,0.25", "s2,m0,Cardiomegaly,0.123456789012345");
        let outputs = write_file(dir.path(), "outputs.csv", &outputs_text);
        let ds = load_dataset(&studies, &outputs, None).unwrap();

        let s2 = dir.path().join("studies2.csv");
        let o2 = dir.path().join("outputs2.csv");
        let h2 = dir.path().join("hierarchy2.json");
        write_dataset(&ds, &s2, &o2, &h2).unwrap();
        let back = load_dataset(&s2, &o2, Some(&h2)).unwrap();
        assert_eq!(ds, back);
    }
}
