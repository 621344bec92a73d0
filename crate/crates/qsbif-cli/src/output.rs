//! Artifact formats and atomic writes.
//!
//! CSV artifacts start with one `# qsbif {json}` metadata line; branch files
//! then carry a `[points]` and a `[special]` section. JSON artifacts are
//! `{"meta": ..., "data": ...}`. Everything after the metadata is a pure
//! function of the configuration and seed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use qsbif_core::continuation::Branch;
use qsbif_core::solve::Trajectory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
const META_PREFIX: &str = "# qsbif ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub model: String,
    pub artifact: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    /// Not part of the deterministic content.
    pub created_unix: u64,
}

impl Meta {
    pub fn new(command: &str, model: &str, config_text: &str, seed: Option<u64>) -> Self {
        let digest = Sha256::digest(config_text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Meta {
            schema_version: SCHEMA_VERSION,
            tool: "qsbif".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            model: model.into(),
            artifact: String::new(),
            config_sha256: hex,
            seed,
            created_unix,
        }
    }

    fn for_artifact(&self, artifact: &str) -> Meta {
        Meta { artifact: artifact.into(), ..self.clone() }
    }
}

/// Format a float so that it parses back to the same bits. Non-finite
/// values are written as empty cells only when NaN.
fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

fn parse_num(s: &str) -> Result<f64, String> {
    if s.is_empty() {
        Ok(f64::NAN)
    } else {
        s.parse().map_err(|_| format!("not a number: '{s}'"))
    }
}

fn row(cells: impl IntoIterator<Item = String>) -> String {
    cells.into_iter().collect::<Vec<_>>().join(",")
}

/// NaN-tolerant equality for round-trip checks.
pub fn same(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()))
}

// ---------------------------------------------------------------------------
// Branch tables

#[derive(Debug, Clone, PartialEq)]
pub struct SpecialRow {
    pub kind: String,
    pub test: String,
    /// arclength, params, state, eigenvalue re/im pairs, diagnostics.
    pub values: Vec<f64>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchTable {
    pub kind: String,
    pub param_names: Vec<String>,
    pub state_names: Vec<String>,
    pub test_names: Vec<String>,
    pub eigen_count: usize,
    pub data_names: Vec<String>,
    pub diag_names: Vec<String>,
    /// arclength, params, state, tests, eigenvalue re/im pairs, data.
    pub rows: Vec<Vec<f64>>,
    pub special: Vec<SpecialRow>,
    pub termination: String,
}

fn eig_cols(n: usize) -> Vec<String> {
    (0..n).flat_map(|k| [format!("eig{k}_re"), format!("eig{k}_im")]).collect()
}

fn sanitize(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

impl BranchTable {
    pub fn from_branch(b: &Branch) -> Self {
        let eigen_count = b
            .points
            .iter()
            .map(|p| p.eigenvalues.len())
            .chain(b.special.iter().map(|s| s.eigenvalues.len()))
            .max()
            .unwrap_or(0);
        let data_names: Vec<String> =
            b.points.iter().flat_map(|p| p.data.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
        let diag_names: Vec<String> = b
            .special
            .iter()
            .flat_map(|s| s.diagnostics.values.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let eig = |ev: &[qsbif_core::equilibria::Eigen]| -> Vec<f64> {
            (0..eigen_count)
                .flat_map(|k| ev.get(k).map(|e| [e.re, e.im]).unwrap_or([f64::NAN; 2]))
                .collect()
        };
        let rows = b
            .points
            .iter()
            .map(|p| {
                let mut r = vec![p.arclength];
                r.extend(&p.params);
                r.extend(&p.state);
                r.extend(&p.tests);
                r.extend(eig(&p.eigenvalues));
                r.extend(data_names.iter().map(|k| p.data.get(k).copied().unwrap_or(f64::NAN)));
                r
            })
            .collect();
        let special = b
            .special
            .iter()
            .map(|s| {
                let mut v = vec![s.arclength];
                v.extend(&s.params);
                v.extend(&s.state);
                v.extend(eig(&s.eigenvalues));
                v.extend(diag_names.iter().map(|k| s.diagnostics.values.get(k).copied().unwrap_or(f64::NAN)));
                SpecialRow {
                    kind: s.kind.label().to_string(),
                    test: s.test.clone(),
                    values: v,
                    notes: sanitize(&s.diagnostics.notes.join(";")),
                }
            })
            .collect();
        BranchTable {
            kind: b.kind.clone(),
            param_names: b.param_names.clone(),
            state_names: b.state_names.clone(),
            test_names: b.test_names.clone(),
            eigen_count,
            data_names,
            diag_names,
            rows,
            special,
            termination: sanitize(&serde_json::to_string(&b.termination).unwrap_or_default()),
        }
    }

    fn point_header(&self) -> Vec<String> {
        let mut h = vec!["arclength".to_string()];
        h.extend(self.param_names.iter().cloned());
        h.extend(self.state_names.iter().cloned());
        h.extend(self.test_names.iter().map(|t| format!("test_{t}")));
        h.extend(eig_cols(self.eigen_count));
        h.extend(self.data_names.iter().cloned());
        h
    }

    fn special_header(&self) -> Vec<String> {
        let mut h = vec!["kind".to_string(), "test".to_string(), "arclength".to_string()];
        h.extend(self.param_names.iter().cloned());
        h.extend(self.state_names.iter().cloned());
        h.extend(eig_cols(self.eigen_count));
        h.extend(self.diag_names.iter().cloned());
        h.push("notes".into());
        h
    }

    /// Data sections only (no metadata line).
    pub fn body(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "[branch]\nkind,{}\ntermination,{}\ngroups,{},{},{},{},{}\n",
            self.kind,
            sanitize(&self.termination),
            self.param_names.len(),
            self.state_names.len(),
            self.test_names.len(),
            self.eigen_count,
            self.data_names.len()
        ));
        s.push_str("[points]\n");
        s.push_str(&row(self.point_header()));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&row(r.iter().map(|v| num(*v))));
            s.push('\n');
        }
        s.push_str("[special]\n");
        s.push_str(&row(self.special_header()));
        s.push('\n');
        for sp in &self.special {
            let mut cells = vec![sp.kind.clone(), sp.test.clone()];
            cells.extend(sp.values.iter().map(|v| num(*v)));
            cells.push(sp.notes.clone());
            s.push_str(&row(cells));
            s.push('\n');
        }
        s
    }

    pub fn parse(body: &str) -> Result<Self, String> {
        let mut lines = body.lines();
        let mut next = || lines.next().ok_or_else(|| "truncated branch file".to_string());
        if next()? != "[branch]" {
            return Err("missing [branch] section".into());
        }
        let kind = next()?.strip_prefix("kind,").ok_or("missing kind")?.to_string();
        let termination = next()?.strip_prefix("termination,").ok_or("missing termination")?.to_string();
        let groups: Vec<usize> = next()?
            .strip_prefix("groups,")
            .ok_or("missing column groups")?
            .split(',')
            .map(|g| g.parse::<usize>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let [np, ns, nt, ne, nd] = groups[..] else {
            return Err("expected five column groups".into());
        };
        if next()? != "[points]" {
            return Err("missing [points] section".into());
        }
        let header: Vec<String> = next()?.split(',').map(String::from).collect();
        if header.len() != 1 + np + ns + nt + 2 * ne + nd {
            return Err("point header does not match column groups".into());
        }
        let mut rows = Vec::new();
        let mut line = next()?;
        while line != "[special]" {
            let r = line.split(',').map(parse_num).collect::<Result<Vec<_>, _>>()?;
            if r.len() != header.len() {
                return Err("ragged point row".into());
            }
            rows.push(r);
            line = next()?;
        }
        let sheader: Vec<String> = next()?.split(',').map(String::from).collect();
        let diag_start = 3 + np + ns + 2 * ne;
        if sheader.len() < diag_start + 1 {
            return Err("special header too short".into());
        }
        let mut special = Vec::new();
        for l in lines {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != sheader.len() {
                return Err(format!("special row has {} cells, header {}", cells.len(), sheader.len()));
            }
            special.push(SpecialRow {
                kind: cells[0].to_string(),
                test: cells[1].to_string(),
                values: cells[2..cells.len() - 1].iter().map(|c| parse_num(c)).collect::<Result<_, _>>()?,
                notes: cells[cells.len() - 1].to_string(),
            });
        }
        let mut at = 1;
        let mut group = |n: usize| {
            let g = header[at..at + n].to_vec();
            at += n;
            g
        };
        let param_names = group(np);
        let state_names = group(ns);
        let test_names = group(nt).iter().map(|h| h.trim_start_matches("test_").to_string()).collect();
        group(2 * ne);
        let data_names = group(nd);
        Ok(BranchTable {
            kind,
            param_names,
            state_names,
            test_names,
            eigen_count: ne,
            data_names,
            diag_names: sheader[diag_start..sheader.len() - 1].to_vec(),
            rows,
            special,
            termination,
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.point_header().iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Value of a named column in a special row.
    pub fn special_value(&self, row: &SpecialRow, name: &str) -> Option<f64> {
        let h = self.special_header();
        let i = h.iter().position(|c| c == name)?;
        row.values.get(i.checked_sub(2)?).copied()
    }

    pub fn same_as(&self, other: &BranchTable) -> bool {
        let meta = (&self.kind, &self.param_names, &self.state_names, &self.test_names, self.eigen_count, &self.data_names, &self.diag_names, &self.termination)
            == (&other.kind, &other.param_names, &other.state_names, &other.test_names, other.eigen_count, &other.data_names, &other.diag_names, &other.termination);
        meta && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| same(a, b))
            && self.special.len() == other.special.len()
            && self.special.iter().zip(&other.special).all(|(a, b)| {
                a.kind == b.kind && a.test == b.test && a.notes == b.notes && same(&a.values, &b.values)
            })
    }
}

// ---------------------------------------------------------------------------
// Trajectory tables

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub columns: Vec<String>,
    /// t followed by the state.
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    /// Uniform samples from the dense output, or the accepted steps when
    /// `samples` is 0.
    pub fn from_trajectory(tr: &Trajectory, state_names: &[&str], samples: usize) -> Self {
        let mut columns = vec!["t".to_string()];
        columns.extend(state_names.iter().map(|s| s.to_string()));
        let rows = if samples == 0 || !tr.has_dense() {
            tr.t.iter().zip(&tr.x).map(|(t, x)| std::iter::once(*t).chain(x.iter().copied()).collect()).collect()
        } else {
            let (t0, t1) = tr.t_span();
            let n = samples.max(2);
            let ts: Vec<f64> = (0..n).map(|k| if k + 1 == n { t1 } else { t0 + (t1 - t0) * k as f64 / (n - 1) as f64 }).collect();
            tr.sample(&ts).into_iter().map(|(t, x)| std::iter::once(t).chain(x).collect()).collect()
        };
        TrajectoryTable { columns, rows }
    }

    pub fn body(&self) -> String {
        let mut s = row(self.columns.iter().cloned());
        s.push('\n');
        for r in &self.rows {
            s.push_str(&row(r.iter().map(|v| num(*v))));
            s.push('\n');
        }
        s
    }

    pub fn parse(body: &str) -> Result<Self, String> {
        let mut lines = body.lines();
        let columns: Vec<String> = lines.next().ok_or("empty trajectory")?.split(',').map(String::from).collect();
        let rows = lines
            .map(|l| l.split(',').map(parse_num).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err("ragged trajectory row".into());
        }
        Ok(TrajectoryTable { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Generic numeric table with string cells allowed (scan and region grids).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn body(&self) -> String {
        let mut s = row(self.columns.iter().cloned());
        s.push('\n');
        for r in &self.rows {
            s.push_str(&row(r.iter().map(|c| sanitize(c))));
            s.push('\n');
        }
        s
    }

    pub fn parse(body: &str) -> Result<Self, String> {
        let mut lines = body.lines();
        let columns: Vec<String> = lines.next().ok_or("empty table")?.split(',').map(String::from).collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err("ragged table row".into());
        }
        Ok(Table { columns, rows })
    }

    pub fn cell(v: f64) -> String {
        num(v)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

// ---------------------------------------------------------------------------
// Files

/// Split a CSV artifact into its metadata and data sections.
pub fn split_csv(text: &str) -> Result<(Meta, &str), String> {
    let (first, rest) = text.split_once('\n').ok_or("empty artifact")?;
    let json = first.strip_prefix(META_PREFIX).ok_or("missing metadata line")?;
    let meta: Meta = serde_json::from_str(json).map_err(|e| e.to_string())?;
    Ok((meta, rest))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JsonArtifact<T> {
    pub meta: Meta,
    pub data: T,
}

/// Artifacts are staged in memory and written only by `commit`, each to a
/// temporary file in the target directory followed by a rename, so a failed
/// run leaves no partial files behind.
#[derive(Debug)]
pub struct Artifacts {
    pub meta: Meta,
    staged: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(meta: Meta) -> Self {
        Artifacts { meta, staged: Vec::new() }
    }

    pub fn csv(&mut self, name: &str, artifact: &str, body: String) {
        let meta = serde_json::to_string(&self.meta.for_artifact(artifact)).expect("metadata serializes");
        self.staged.push((name.to_string(), format!("{META_PREFIX}{meta}\n{body}").into_bytes()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, artifact: &str, data: &T) -> Result<(), CliError> {
        let doc = JsonArtifact { meta: self.meta.for_artifact(artifact), data };
        let mut text = serde_json::to_string_pretty(&doc).map_err(CliError::numerical)?;
        text.push('\n');
        self.staged.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.staged.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let io = |p: &Path, e: std::io::Error| CliError::Io { path: p.display().to_string(), message: e.to_string() };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut out = Vec::new();
        for (name, bytes) in self.staged {
            let path = dir.join(&name);
            write_atomic(&path, &bytes).map_err(|e| io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
