use std::io::Write;

use super::{NamdpModel, QGrid};

/// One CSV row per state and grid point: `state,a1..ak,r_sigma,q`.
///
/// `state` is the state's index in first-appearance order. `q` is empty when
/// no values are supplied.
pub fn write_model_csv<W: Write>(model: &NamdpModel, q: Option<&QGrid>, mut out: W) -> std::io::Result<()> {
    let dim = model.grid().dim();
    let mut header = vec!["state".to_string()];
    header.extend((1..=dim).map(|k| format!("a{k}")));
    header.push("r_sigma".into());
    header.push("q".into());
    writeln!(out, "{}", header.join(","))?;
    for (s, row) in model.r_sigma().iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            write!(out, "{s}")?;
            for x in model.grid().point(j) {
                write!(out, ",{x}")?;
            }
            write!(out, ",{r}")?;
            match q {
                Some(q) => writeln!(out, ",{}", q.get(s, j))?,
                None => writeln!(out, ",")?,
            }
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_bandit1d;
    use crate::namdp::{build_limit_namdp, value_iteration, ActionGrid};
    use crate::noise::ActionBox;

    #[test]
    fn bandit_export_rows() {
        let grid = ActionGrid::regular(ActionBox::symmetric(1, 1.5).unwrap(), 7).unwrap();
        let m = build_limit_namdp(&gen_bandit1d(), &grid, 0.9).unwrap();
        let q = value_iteration(&m, 1e-12, 10).unwrap().q;
        let mut buf = Vec::new();
        write_model_csv(&m, Some(&q), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "state,a1,r_sigma,q");
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[4], "0,0,-0.5,-0.5");
    }
}
