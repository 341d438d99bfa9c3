use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};

/// Outlet flux of every gas on a shared uniform time grid; flux in nmol/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxSeries {
    pub time: Vec<f64>,
    pub gases: Vec<String>,
    /// `flux[g][t]`
    pub flux: Vec<Vec<f64>>,
}

/// Formats with nine significant digits.
pub(crate) fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{v:.8e}")
}

impl FluxSeries {
    pub fn zeros(time: Vec<f64>, gases: Vec<String>) -> Self {
        let n = time.len();
        let flux = vec![vec![0.0; n]; gases.len()];
        FluxSeries { time, gases, flux }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn gas(&self, name: &str) -> Option<&[f64]> {
        self.gases.iter().position(|g| g == name).map(|i| self.flux[i].as_slice())
    }

    pub fn dt(&self) -> f64 {
        if self.time.len() >= 2 {
            self.time[1] - self.time[0]
        } else {
            self.time.first().copied().unwrap_or(0.0)
        }
    }

    /// Time integral of one gas's flux (nmol): rectangle rule over the grid
    /// steps plus the first interval from t = 0.
    pub fn integral(&self, gas: usize) -> f64 {
        let mut total = 0.0;
        let mut prev = 0.0;
        for (t, f) in self.time.iter().zip(&self.flux[gas]) {
            total += (t - prev) * f;
            prev = *t;
        }
        total
    }

    pub fn peak(&self, gas: usize) -> (f64, f64) {
        self.flux[gas]
            .iter()
            .zip(&self.time)
            .fold((0.0, 0.0), |acc, (&f, &t)| if f > acc.1 { (t, f) } else { acc })
    }

    pub fn validate(&self) -> Result<()> {
        if self.flux.len() != self.gases.len() {
            return Err(TapError::invalid("flux/gas count mismatch"));
        }
        if self.flux.iter().any(|f| f.len() != self.time.len()) {
            return Err(TapError::invalid("flux rows do not match the time grid"));
        }
        if self.time.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TapError::invalid("time grid must be strictly increasing"));
        }
        if self.flux.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TapError::invalid("non-finite flux"));
        }
        Ok(())
    }

    /// `time_s,<gas1>,<gas2>,...` with nine significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 16 * (self.gases.len() + 1));
        out.push_str("time_s");
        for g in &self.gases {
            out.push(',');
            out.push_str(g);
        }
        out.push('\n');
        for (i, t) in self.time.iter().enumerate() {
            out.push_str(&sig9(*t));
            for f in &self.flux {
                let _ = write!(out, ",{}", sig9(f[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| TapError::invalid("empty flux CSV"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"time_s") {
            return Err(TapError::invalid("flux CSV must start with a 'time_s' column"));
        }
        let gases: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut time = Vec::new();
        let mut flux = vec![Vec::new(); gases.len()];
        for (row, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| TapError::Syntax { line: row + 2, msg: "bad number".into() })?;
            if vals.len() != gases.len() + 1 {
                return Err(TapError::Syntax { line: row + 2, msg: "wrong column count".into() });
            }
            time.push(vals[0]);
            for (g, v) in vals[1..].iter().enumerate() {
                flux[g].push(*v);
            }
        }
        let series = FluxSeries { time, gases, flux };
        series.validate()?;
        Ok(series)
    }
}
