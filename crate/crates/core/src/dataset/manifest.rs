use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::imaging::{read_pnm, Image};
use crate::{Error, Result};

pub const MANIFEST_HEADER: &str = "image_path,area_sq_m,origin_id";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    /// Path relative to the manifest's directory.
    pub image_path: String,
    pub area_sq_m: f64,
    /// Identifier of the pre-augmentation picture this record derives from.
    pub origin_id: String,
}

/// Records plus the directory their relative paths resolve against.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Self {
        Self {
            root: root.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path_of(&self, rec: &ManifestRecord) -> PathBuf {
        self.root.join(&rec.image_path)
    }

    pub fn load_image(&self, rec: &ManifestRecord) -> Result<Image> {
        read_pnm(self.path_of(rec))
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.area_sq_m).collect()
    }

    /// Distinct origin ids in first-appearance order.
    pub fn origins(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.origin_id.as_str()))
            .map(|r| r.origin_id.clone())
            .collect()
    }

    /// Sub-manifest with the given record indices, sharing this root.
    pub fn subset(&self, indices: &[usize]) -> Manifest {
        Manifest {
            root: self.root.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 1;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        let line = row.position().map_or(line, |p| p.line());
        if i == 0 {
            let header: Vec<&str> = row.iter().collect();
            if header.join(",") != MANIFEST_HEADER {
                return Err(parse_err(line, format!("expected header {MANIFEST_HEADER:?}")));
            }
            continue;
        }
        if row.len() != 3 {
            return Err(parse_err(line, format!("expected 3 columns, found {}", row.len())));
        }
        let area: f64 = row[1]
            .parse()
            .map_err(|_| parse_err(line, format!("area {:?} is not a number", &row[1])))?;
        if !(area >= 0.0) || !area.is_finite() {
            return Err(parse_err(line, format!("area {area} must be finite and >= 0")));
        }
        if row[2].is_empty() {
            return Err(parse_err(line, "empty origin_id".into()));
        }
        records.push(ManifestRecord {
            image_path: row[0].to_string(),
            area_sq_m: area,
            origin_id: row[2].to_string(),
        });
    }
    if records.is_empty() && text.trim().is_empty() {
        return Err(parse_err(1, "missing header".into()));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { root, records })
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in &manifest.records {
        if r.image_path.contains([',', '\n', '"']) || r.origin_id.contains([',', '\n', '"']) {
            return Err(Error::invalid(format!(
                "manifest fields may not contain commas, quotes or newlines: {:?}",
                r.image_path
            )));
        }
        out.push_str(&format!("{},{},{}\n", r.image_path, r.area_sq_m, r.origin_id));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(p: &str, a: f64, o: &str) -> ManifestRecord {
        ManifestRecord {
            image_path: p.into(),
            area_sq_m: a,
            origin_id: o.into(),
        }
    }

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("m.csv");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_manifest(write(dir.path(), "image_path,area_sq_m,origin_id\n")).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.root, dir.path());
    }

    #[test]
    fn malformed_rows_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("image_path,area_sq_m,origin_id\na.ppm,1,h0\nimg.ppm,abc,h1\n", 3),
            ("image_path,area_sq_m,origin_id\nimg.ppm,1\n", 2),
            ("image_path,area_sq_m,origin_id\nimg.ppm,-4,h\n", 2),
            ("image_path,area_sq_m,origin_id\nimg.ppm,4,\n", 2),
            ("path,area\n", 1),
        ];
        for (body, want) in cases {
            match load_manifest(write(dir.path(), body)) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{body:?}"),
                other => panic!("{body:?}: {other:?}"),
            }
        }
        assert!(matches!(
            load_manifest(dir.path().join("absent.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn writes_lf_without_quotes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = Manifest::new(dir.path(), vec![rec("imgs/a b.ppm", 12.5, "h1")]);
        save_manifest(&m, &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "image_path,area_sq_m,origin_id\nimgs/a b.ppm,12.5,h1\n"
        );
        let bad = Manifest::new(dir.path(), vec![rec("a,b.ppm", 1.0, "h")]);
        assert!(save_manifest(&bad, &p).is_err());
    }

    proptest! {
        #[test]
        fn save_load_round_trip(rows in proptest::collection::vec(
            ("[a-z0-9_/]{1,12}\\.ppm", 0.0f64..1e6, "[a-z0-9]{1,6}"), 0..20)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.csv");
            let m = Manifest::new(dir.path(), rows.iter().map(|(a, b, c)| rec(a, *b, c)).collect());
            save_manifest(&m, &p).unwrap();
            prop_assert_eq!(load_manifest(&p).unwrap(), m);
        }
    }

    #[test]
    fn origins_in_first_appearance_order() {
        let m = Manifest::new("", vec![rec("a", 1.0, "x"), rec("b", 1.0, "y"), rec("c", 1.0, "x")]);
        assert_eq!(m.origins(), vec!["x", "y"]);
    }
}
