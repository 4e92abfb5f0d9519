//! Flag shorthands: policies, distributions and number lists.

use externreg::{DiscreteDistribution, Policy};

fn number(text: &str) -> Result<f64, String> {
    let t = text.trim();
    // Allow simple fractions such as 16/15.
    if let Some((n, d)) = t.split_once('/') {
        let (n, d) = (number(n)?, number(d)?);
        return Ok(n / d);
    }
    t.parse::<f64>()
        .map_err(|_| format!("{t:?} is not a number"))
}

/// `y=…,c=…,p=…` in any order; every key is required.
pub fn policy(text: &str) -> Result<Policy, String> {
    let (mut y, mut c, mut p) = (None, None, None);
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("{part:?} is not key=value"))?;
        let slot = match key.trim() {
            "y" => &mut y,
            "c" => &mut c,
            "p" => &mut p,
            other => return Err(format!("unknown policy key {other:?}")),
        };
        if slot.replace(number(value)?).is_some() {
            return Err(format!("policy key {key:?} given twice"));
        }
    }
    match (y, c, p) {
        (Some(y), Some(c), Some(p)) => Ok(Policy { y, c, p }),
        _ => Err("policy needs y=…,c=…,p=…".into()),
    }
}

/// `uniform:lo,hi,n`, `point:x` or `atoms:x1=p1,x2=p2,…`.
pub fn distribution(text: &str) -> Result<DiscreteDistribution, String> {
    let (kind, body) = text
        .split_once(':')
        .ok_or_else(|| format!("{text:?}: expected uniform:…, point:… or atoms:…"))?;
    let made = match kind {
        "uniform" => {
            let parts: Vec<&str> = body.split(',').collect();
            let [lo, hi, n] = parts[..] else {
                return Err(format!("uniform needs lo,hi,n, got {body:?}"));
            };
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| format!("{n:?} is not a count"))?;
            DiscreteDistribution::uniform(number(lo)?, number(hi)?, n)
        }
        "point" => DiscreteDistribution::point_mass(number(body)?),
        "atoms" => {
            let pairs = body
                .split(',')
                .map(|pair| {
                    let (x, p) = pair
                        .split_once('=')
                        .ok_or_else(|| format!("{pair:?} is not point=prob"))?;
                    Ok((number(x)?, number(p)?))
                })
                .collect::<Result<Vec<_>, String>>()?;
            DiscreteDistribution::new(pairs)
        }
        other => return Err(format!("unknown distribution kind {other:?}")),
    };
    made.map_err(|e| e.to_string())
}

/// Parsed number list; a newtype so clap treats it as one value.
#[derive(Clone, Debug)]
pub struct Grid(pub Vec<f64>);

/// Comma list `a,b,c` or linear range `lo:hi:n` (inclusive, `n >= 2`).
pub fn grid(text: &str) -> Result<Grid, String> {
    grid_points(text).map(Grid)
}

fn grid_points(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts[..] {
        [lo, hi, n] => {
            let (lo, hi) = (number(lo)?, number(hi)?);
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| format!("{n:?} is not a count"))?;
            if n < 2 || !(hi > lo) {
                return Err(format!("range {text:?} needs n >= 2 and hi > lo"));
            }
            Ok((0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect())
        }
        [list] => list.split(',').map(number).collect(),
        _ => Err(format!("{text:?}: expected a,b,c or lo:hi:n")),
    }
}
