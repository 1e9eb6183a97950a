//! Inclusive integer list syntax: `7`, `0..9`, `10..60..10`, and
//! comma-separated combinations of those.

use std::str::FromStr;

/// Expands a list expression, keeping the written order.
pub fn parse_list<T>(text: &str) -> Result<Vec<T>, String>
where
    T: FromStr + Copy + PartialOrd + TryFrom<u64> + Into<u64>,
{
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let pieces: Vec<&str> = part.split("..").collect();
        let num = |s: &str| -> Result<u64, String> {
            s.trim()
                .parse::<u64>()
                .map_err(|_| format!("{s:?} is not a nonnegative integer"))
        };
        let (start, end, step) = match pieces.as_slice() {
            [one] => {
                let v = num(one)?;
                (v, v, 1)
            }
            [a, b] => (num(a)?, num(b)?, 1),
            [a, b, s] => (num(a)?, num(b)?, num(s)?),
            _ => return Err(format!("cannot parse range {part:?}")),
        };
        if step == 0 {
            return Err(format!("range {part:?} has a zero step"));
        }
        if end < start {
            return Err(format!("range {part:?} is empty"));
        }
        let mut v = start;
        while v <= end {
            out.push(T::try_from(v).map_err(|_| format!("{v} is out of range"))?);
            match v.checked_add(step) {
                Some(next) => v = next,
                None => break,
            }
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

/// Comma-separated reals.
pub fn parse_reals(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| format!("{p:?} is not a number"))
        })
        .collect()
}
