use anyhow::{bail, Context, Result};

/// Parses `1..20` (inclusive), `1..=20`, single seeds and comma lists of
/// both. Duplicates are dropped, first occurrence wins.
pub fn parse(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let range = part
            .split_once("..=")
            .or_else(|| part.split_once(".."));
        match range {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().with_context(|| format!("bad seed range `{part}`"))?;
                let b: u64 = b.trim().parse().with_context(|| format!("bad seed range `{part}`"))?;
                if b < a {
                    bail!("empty seed range `{part}`");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().with_context(|| format!("bad seed `{part}`"))?),
        }
    }
    if seeds.is_empty() {
        bail!("no seeds in `{text}`");
    }
    let mut seen = std::collections::HashSet::new();
    seeds.retain(|s| seen.insert(*s));
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_inclusive() {
        assert_eq!(parse("1..20").unwrap().len(), 20);
        assert_eq!(parse("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse("5, 1..2,5").unwrap(), vec![5, 1, 2]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("").is_err());
        assert!(parse("3..1").is_err());
        assert!(parse("a").is_err());
    }
}
