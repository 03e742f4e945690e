//! `--grid key=v1,v2 ...` parsing.

use treecnn::train::{ClassWeighting, SweepGrid};

/// Splits on commas that are not inside parentheses, so
/// `random_normal(0,0.05),he_normal` yields two items.
fn split_values(list: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in list.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(list[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(list[start..].trim());
    out.into_iter().filter(|s| !s.is_empty()).collect()
}

pub fn parse_weighting(s: &str) -> Result<ClassWeighting, String> {
    match s {
        "none" => Ok(ClassWeighting::None),
        "balanced" => Ok(ClassWeighting::Balanced),
        _ => Err(format!("unknown class weighting {s:?} (expected none or balanced)")),
    }
}

fn parse_all<T>(values: &[&str], parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    values.iter().map(|v| parse(v)).collect()
}

/// Applies `key=values` terms on top of `grid`; each given key replaces that axis.
pub fn apply_grid_terms(grid: &mut SweepGrid, terms: &[String]) -> Result<(), String> {
    for term in terms {
        let (key, list) = term.split_once('=').ok_or_else(|| format!("grid term {term:?} is not key=values"))?;
        let values = split_values(list);
        if values.is_empty() {
            return Err(format!("grid axis {key:?} has no values"));
        }
        let err = |e: String| format!("grid axis {key}: {e}");
        match key.trim() {
            "blocks" | "n_blocks" => {
                grid.n_blocks =
                    parse_all(&values, |v| v.parse().map_err(|_| format!("bad block count {v:?}"))).map_err(err)?
            }
            "optimizer" => {
                grid.optimizer = parse_all(&values, |v| v.parse().map_err(|e| format!("{e}"))).map_err(err)?
            }
            "initializer" => {
                grid.initializer = parse_all(&values, |v| v.parse().map_err(|e| format!("{e}"))).map_err(err)?
            }
            "dropout" => {
                grid.dropout =
                    parse_all(&values, |v| v.parse().map_err(|_| format!("bad dropout rate {v:?}"))).map_err(err)?
            }
            "weighting" | "class_weighting" => {
                grid.class_weighting = parse_all(&values, parse_weighting).map_err(err)?
            }
            other => {
                return Err(format!("unknown grid axis {other:?} (blocks, optimizer, initializer, dropout, weighting)"))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use treecnn::init::InitializerKind;
    use treecnn::optim::OptimizerKind;

    #[test]
    fn parses_terms() {
        let mut g = SweepGrid::default();
        let terms = [
            "blocks=1,2".to_string(),
            "optimizer=sgd,adamax".into(),
            "initializer=random_normal(0,0.1),he_normal".into(),
        ];
        apply_grid_terms(&mut g, &terms).unwrap();
        assert_eq!(g.n_blocks, vec![1, 2]);
        assert_eq!(g.optimizer, vec![OptimizerKind::Sgd, OptimizerKind::Adamax]);
        assert_eq!(
            g.initializer,
            vec![InitializerKind::RandomNormal { mean: 0.0, stddev: 0.1 }, InitializerKind::HeNormal]
        );
    }

    #[test]
    fn rejects_unknown_axis() {
        assert!(apply_grid_terms(&mut SweepGrid::default(), &["colour=red".into()]).is_err());
        assert!(apply_grid_terms(&mut SweepGrid::default(), &["blocks".into()]).is_err());
    }
}
