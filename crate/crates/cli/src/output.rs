//! Artifact formatting and all-or-nothing directory writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use prepinn_core::train::ConvergenceRecord;
use prepinn_core::Field;

/// Round-trip exact for 64-bit floats.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn convergence_csv(records: &[ConvergenceRecord]) -> String {
    let mut s = String::from("epoch,loss,rel_l2,seconds\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, num(r.loss), num(r.rel_l2), num(r.seconds));
    }
    s
}

/// One row per interior node, `i` fastest.
pub fn fields_csv(field: &Field, names: &[&str]) -> String {
    let g = field.grid();
    let mut s = String::from("x,y");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for j in 0..g.ny {
        for i in 0..g.nx {
            let _ = write!(s, "{},{}", num(g.x(i as isize)), num(g.y(j as isize)));
            for c in 0..field.n_components() {
                let _ = write!(s, ",{}", num(field.get(c, i, j)));
            }
            s.push('\n');
        }
    }
    s
}

/// Write every `(file name, contents)` pair into `dir`. Each file is staged
/// in a temporary sibling and renamed into place only after all of them
/// were written; a failed rename removes the files already moved.
pub fn write_all_atomic(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = tempfile::Builder::new()
            .prefix(&format!(".{name}."))
            .tempfile_in(dir)
            .with_context(|| format!("cannot stage {name} in {}", dir.display()))?;
        tmp.write_all(bytes).with_context(|| format!("cannot write {name}"))?;
        tmp.as_file().sync_all().with_context(|| format!("cannot flush {name}"))?;
        staged.push((tmp, dir.join(name)));
    }
    let mut written: Vec<PathBuf> = Vec::with_capacity(staged.len());
    for (tmp, target) in staged {
        if let Err(e) = tmp.persist(&target) {
            for done in &written {
                let _ = std::fs::remove_file(done);
            }
            return Err(e.error).with_context(|| format!("cannot move {} into place", target.display()));
        }
        written.push(target);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use prepinn_core::grid::make_grid;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(num(0.0), "0.0000000000000000e0");
    }

    #[test]
    fn csv_layouts() {
        let rec = [ConvergenceRecord { epoch: 3, loss: 0.5, rel_l2: 0.25, seconds: 0.0 }];
        let csv = convergence_csv(&rec);
        assert_eq!(csv.lines().next(), Some("epoch,loss,rel_l2,seconds"));
        assert_eq!(csv.lines().nth(1), Some("3,5.0000000000000000e-1,2.5000000000000000e-1,0.0000000000000000e0"));
        let g = make_grid(3, 4, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let f = Field::new(g, 2, (0..24).map(f64::from).collect()).unwrap();
        let csv = fields_csv(&f, &["u", "v"]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,u,v");
        assert_eq!(lines.len(), 13);
        assert!(lines[2].ends_with(",1.0000000000000000e0,1.3000000000000000e1"));
    }

    #[test]
    fn atomic_write_leaves_nothing_on_failure() {
        let root = tempfile::tempdir().unwrap();
        let ok =
            write_all_atomic(&root.path().join("a"), &[("x.txt", b"1".to_vec()), ("y.txt", b"2".to_vec())]).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(std::fs::read(root.path().join("a/y.txt")).unwrap(), b"2");
        // a directory squatting on the second name makes the final rename fail
        let dir = root.path().join("b");
        std::fs::create_dir_all(dir.join("y.txt/inner")).unwrap();
        assert!(write_all_atomic(&dir, &[("x.txt", b"1".to_vec()), ("y.txt", b"2".to_vec())]).is_err());
        let mut names: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names, vec!["y.txt"]);
    }
}
