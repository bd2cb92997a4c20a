use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use levy_mfg::grid::{Field, Grid};
use levy_mfg::stepping::Trajectory;
use serde::Serialize;

use crate::Failure;

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub paper_anchor: String,
}

/// Direction of the comparison between `value` and `tolerance`.
pub enum Bound {
    AtMost,
    AtLeast,
}

pub struct Artifacts {
    dir: PathBuf,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: PathBuf) -> Result<Self, Failure> {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        Ok(Artifacts { dir, verdicts: vec![], warnings: vec![] })
    }

    pub fn verdict(&mut self, name: &str, value: f64, tolerance: f64, bound: Bound, anchor: &str) -> bool {
        let pass = value.is_finite()
            && match bound {
                Bound::AtMost => value <= tolerance,
                Bound::AtLeast => value >= tolerance,
            };
        self.verdicts.push(Verdict {
            name: name.into(),
            value,
            tolerance,
            pass,
            paper_anchor: anchor.into(),
        });
        pass
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        let p = self.dir.join(name);
        File::create(&p).map(BufWriter::new).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
    }

    pub fn fields(&self, name: &str, fields: &[&Field]) -> Result<(), Failure> {
        let mut w = self.create(name)?;
        levy_mfg::io::write_fields(&mut w, fields).map_err(Failure::from)
    }

    pub fn trajectory(&self, name: &str, t: &Trajectory) -> Result<(), Failure> {
        let refs: Vec<&Field> = t.slices.iter().collect();
        self.fields(name, &refs)
    }

    /// `n x n` matrix stored as a two-axis field over `(x, y)`.
    pub fn matrix(&self, name: &str, grid: &Grid, values: Vec<f64>) -> Result<(), Failure> {
        let n = grid.n(0);
        let l = grid.half_width(0);
        let g2 = Grid::new(&[n, n], &[l, l])?;
        self.fields(name, &[&Field::new(&g2, values)?])
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let w = self.create(name)?;
        serde_json::to_writer_pretty(w, value).map_err(|e| Failure::Io(e.to_string()))
    }

    pub fn csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<(), Failure> {
        let mut w = csv::Writer::from_writer(self.create(name)?);
        for r in rows {
            w.serialize(r).map_err(|e| Failure::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| Failure::Io(e.to_string()))
    }

    /// Writes `verdicts.json`; in strict mode outstanding warnings become a failing verdict.
    pub fn finish(mut self, strict: bool) -> Result<bool, Failure> {
        if strict {
            let n = self.warnings.len() as f64;
            self.verdict("warnings", n, 0.0, Bound::AtMost, "strict mode");
        }
        self.json("verdicts.json", &self.verdicts)?;
        if !self.warnings.is_empty() {
            self.json("warnings.json", &self.warnings)?;
        }
        for v in &self.verdicts {
            println!(
                "{} {}: {:.4e} (tolerance {:.3e})",
                if v.pass { "PASS" } else { "FAIL" },
                v.name,
                v.value,
                v.tolerance
            );
        }
        Ok(self.verdicts.iter().all(|v| v.pass))
    }
}
