use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::CellRecord;
use crate::error::{Error, Result};
use crate::stream_rng;

/// Cell-to-fold assignment, indexed like the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    assignment: Vec<usize>,
}

/// Stratify by 7-class label: shuffle each class, then deal cells round-robin
/// with one counter that carries over between classes.
pub fn make_folds(records: &[CellRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > records.len() {
        return Err(Error::invalid(format!(
            "{k} folds requested for {} cells",
            records.len()
        )));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.class_label).or_default().push(i);
    }
    let mut rng = stream_rng(seed, 0);
    let mut assignment = vec![0; records.len()];
    let mut counter = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = counter % k;
            counter += 1;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

impl FoldPlan {
    /// Use the manifest's own fold column; every record must carry one.
    pub fn from_records(records: &[CellRecord]) -> Result<Option<Self>> {
        if records.iter().all(|r| r.fold.is_none()) {
            return Ok(None);
        }
        let assignment = records
            .iter()
            .map(|r| {
                r.fold
                    .ok_or_else(|| Error::invalid(format!("{r} has no fold while others do")))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(Error::invalid("manifest folds must span at least 2 folds"));
        }
        Ok(Some(Self {
            k,
            seed: 0,
            assignment,
        }))
    }

    pub fn fold_of(&self, index: usize) -> usize {
        self.assignment[index]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Per-class count in each fold: `class label -> [count per fold]`.
    pub fn class_counts(&self, records: &[CellRecord]) -> BTreeMap<u8, Vec<usize>> {
        let mut out: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (r, &f) in records.iter().zip(&self.assignment) {
            out.entry(r.class_label).or_insert_with(|| vec![0; self.k])[f] += 1;
        }
        out
    }

    pub fn to_text(&self, records: &[CellRecord]) -> String {
        let mut s = format!("# k {} seed {}\n", self.k, self.seed);
        for (r, f) in records.iter().zip(&self.assignment) {
            s.push_str(&format!("{}\t{}\t{}\n", r.id, r.class_label, f));
        }
        s
    }

    pub fn save(&self, path: &Path, records: &[CellRecord]) -> Result<()> {
        std::fs::write(path, self.to_text(records)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, n_records: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: &str| Error::Manifest {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let (k, seed) = match header.as_slice() {
            ["#", "k", k, "seed", s] => (
                k.parse().map_err(|_| bad(1, "bad k"))?,
                s.parse().map_err(|_| bad(1, "bad seed"))?,
            ),
            _ => return Err(bad(1, "missing `# k K seed S` header")),
        };
        let mut assignment = Vec::with_capacity(n_records);
        for (n, line) in lines.enumerate() {
            let fold = line
                .split('\t')
                .nth(2)
                .and_then(|s| s.parse().ok())
                .filter(|&f: &usize| f < k)
                .ok_or_else(|| bad(n + 2, "bad fold row"))?;
            assignment.push(fold);
        }
        if assignment.len() != n_records {
            return Err(Error::invalid(format!(
                "fold plan {} covers {} cells, manifest has {n_records}",
                path.display(),
                assignment.len()
            )));
        }
        Ok(Self {
            k,
            seed,
            assignment,
        })
    }
}
