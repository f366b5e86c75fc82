//! Outcome series: CSV files and synthetic generators.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::HarnessError;

/// Reads the `value` column of a headed CSV file.
pub fn load_series(path: &Path) -> Result<Vec<f64>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| HarnessError::Data(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "value")
        .ok_or_else(|| HarnessError::Data(format!("{}: no `value` column", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let rec = rec.map_err(|e| HarnessError::Data(format!("line {line}: {e}")))?;
        let raw = rec.get(col).unwrap_or("").trim();
        let v: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| HarnessError::Data(format!("line {line}: unparseable value `{raw}`")))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(HarnessError::Data(format!("{}: no rows", path.display())));
    }
    Ok(out)
}

/// AR(1) whose mean and noise level switch every 250 steps.
pub fn ar1_regime_shift(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = 0.0;
    (0..n)
        .map(|t| {
            let (mu, sd) = if (t / 250) % 2 == 0 { (0.0, 1.0) } else { (3.0, 0.5) };
            let e: f64 = StandardNormal.sample(&mut rng);
            y = mu + 0.8 * (y - mu) + sd * e;
            y
        })
        .collect()
}

/// Nonnegative hourly series with a daily cycle, a drifting level and
/// persistent noise, shaped like wind generation.
pub fn seasonal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = 0.0;
    let mut noise = 0.0;
    (0..n)
        .map(|t| {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            level = 0.995 * level + 0.1 * e1;
            noise = 0.7 * noise + 0.6 * e2;
            let day = (2.0 * std::f64::consts::PI * (t % 24) as f64 / 24.0).sin();
            (5.0 + 2.0 * day + 2.0 * level + noise).max(0.0)
        })
        .collect()
}

pub fn generate(id: &str, n: usize, seed: u64) -> Result<Vec<f64>, HarnessError> {
    match id {
        "ar1" => Ok(ar1_regime_shift(n, seed)),
        "seasonal" => Ok(seasonal(n, seed)),
        other => Err(HarnessError::Config(format!(
            "unknown generator `{other}` (ar1, seasonal)"
        ))),
    }
}

/// Data range widened by 5% on each side.
pub fn outcome_range(series: &[f64]) -> (f64, f64) {
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-9);
    (lo - pad, hi + pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_values() {
        let f = file("timestamp,value\na,1\nb,2\nc,3\n");
        assert_eq!(load_series(f.path()).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn blank_value_names_the_line() {
        let f = file("value\n1\n\"\"\n3\n");
        let e = load_series(f.path()).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn missing_column_and_empty_file() {
        assert!(load_series(file("x\n1\n").path())
            .unwrap_err()
            .to_string()
            .contains("value"));
        assert!(load_series(file("value\n").path())
            .unwrap_err()
            .to_string()
            .contains("no rows"));
    }

    #[test]
    fn generators_are_reproducible() {
        assert_eq!(ar1_regime_shift(100, 3), ar1_regime_shift(100, 3));
        assert_ne!(ar1_regime_shift(100, 3), ar1_regime_shift(100, 4));
        assert!(seasonal(500, 1).iter().all(|v| *v >= 0.0));
    }
}
